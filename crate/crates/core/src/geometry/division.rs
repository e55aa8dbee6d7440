use serde::{Deserialize, Serialize};

use super::camera::EPS;
use crate::error::{Error, Result};

/// Division distortion model `r_u = r / (1 + Σ_k μ_k r^{2k})` with at most two
/// coefficients, in pixel units.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DivisionModel {
    pub coeffs: Vec<f64>,
}

impl DivisionModel {
    pub fn new(coeffs: Vec<f64>) -> Self {
        debug_assert!(coeffs.len() <= 2);
        Self { coeffs }
    }

    pub fn denominator(&self, radius: f64) -> f64 {
        let r2 = radius * radius;
        let mut pow = r2;
        let mut den = 1.0;
        for mu in &self.coeffs {
            den += mu * pow;
            pow *= r2;
        }
        den
    }

    /// Undistorted radius of a distorted radius, both in pixels.
    pub fn undistort(&self, radius: f64) -> Result<f64> {
        let den = self.denominator(radius);
        if !(den > EPS) {
            return Err(Error::NumericalDomain("division model denominator vanishes"));
        }
        Ok(radius / den)
    }

    fn undistort_derivative(&self, radius: f64) -> f64 {
        let r2 = radius * radius;
        let den = self.denominator(radius);
        // d/dr [r / D(r)] = (D - r D') / D^2, with r D' = Σ 2k μ_k r^{2k}.
        let mut pow = r2;
        let mut r_dprime = 0.0;
        for (k, mu) in self.coeffs.iter().enumerate() {
            r_dprime += 2.0 * (k + 1) as f64 * mu * pow;
            pow *= r2;
        }
        (den - r_dprime) / (den * den)
    }

    /// Whether the undistortion map is positive and strictly increasing on
    /// `(0, max_radius]`, checked on a grid.
    pub fn is_monotone_up_to(&self, max_radius: f64) -> bool {
        let n = 256;
        (1..=n).all(|k| {
            let r = max_radius * k as f64 / n as f64;
            self.denominator(r) > EPS && self.undistort_derivative(r) > 0.0
        })
    }

    /// Distorted radius producing the given undistorted radius, found by
    /// Newton iteration from `r_u`. `None` when it does not converge inside the
    /// monotone range.
    pub fn distort(&self, undistorted: f64) -> Option<f64> {
        if self.coeffs.iter().all(|c| *c == 0.0) {
            return Some(undistorted);
        }
        let mut r = undistorted;
        for _ in 0..50 {
            let g = self.undistort(r).ok()? - undistorted;
            let dg = self.undistort_derivative(r);
            if !(dg > 0.0) {
                return None;
            }
            let step = g / dg;
            r -= step;
            if !r.is_finite() {
                return None;
            }
            if step.abs() <= 1e-12 * (1.0 + r.abs()) {
                return Some(r);
            }
        }
        None
    }
}

/// `r / (1 + Σ_k μ_k r^{2k})`.
pub fn undistort_division(radius: f64, model: &DivisionModel) -> Result<f64> {
    model.undistort(radius)
}
