use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DivisionModel, EPS};

/// Observation expressed in a camera frame known up to forward translation:
/// `v` is the centered pixel and `z` the point with `t_z` not yet applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpgradeCorrespondence {
    pub v: Vector2<f64>,
    pub z: Vector3<f64>,
}

impl UpgradeCorrespondence {
    fn lateral(&self) -> f64 {
        (self.z.x * self.z.x + self.z.y * self.z.y).sqrt()
    }

    /// Signed observed radius along the projected radial direction.
    fn radius(&self) -> f64 {
        let lat = self.lateral();
        if lat <= EPS {
            return self.v.norm();
        }
        (self.v.x * self.z.x + self.v.y * self.z.y) / lat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpgradeSolution {
    pub focal: f64,
    pub t_z: f64,
    pub division: DivisionModel,
}

impl UpgradeSolution {
    /// `r (Z_z + t_z) − f R (1 + Σ μ_k r^{2k})`, the linear constraint residual.
    pub fn algebraic_residual(&self, c: &UpgradeCorrespondence) -> f64 {
        let r = c.radius();
        r * (c.z.z + self.t_z) - self.focal * c.lateral() * self.division.denominator(r)
    }

    /// Predicted centered pixel minus observed one. `None` behind the camera or
    /// outside the invertible range of the division model.
    pub fn reprojection_residual(&self, c: &UpgradeCorrespondence) -> Option<Vector2<f64>> {
        let depth = c.z.z + self.t_z;
        if depth <= EPS {
            return None;
        }
        let lat = c.lateral();
        if lat <= EPS {
            return Some(-c.v);
        }
        let r_u = self.focal * lat / depth;
        let r_d = self.division.distort(r_u)?;
        Some(Vector2::new(c.z.x, c.z.y) * (r_d / lat) - c.v)
    }
}

/// Joint linear estimate of focal length, forward translation and up to two
/// division-model coefficients.
///
/// Per point, `r (Z_z + t_z) = f R (1 + Σ_k μ_k r^{2k})` with `R` the lateral
/// distance of `Z` from the principal axis and `r` the observed radius. This is
/// linear in `(t_z, f, f μ_1, …)`; the minimal count is solved exactly, more
/// points in least squares.
pub fn solve_upgrade_linear(corrs: &[UpgradeCorrespondence], n_dist: usize) -> Result<Vec<UpgradeSolution>> {
    if n_dist > 2 {
        return Err(Error::Precondition(format!("at most 2 division coefficients, got {n_dist}")));
    }
    let unknowns = n_dist + 2;
    if corrs.len() < unknowns {
        return Err(Error::Precondition(format!(
            "upgrade with {n_dist} distortion terms needs {unknowns} points, got {}",
            corrs.len()
        )));
    }
    let radii: Vec<f64> = corrs.iter().map(|c| c.radius()).collect();
    let (rmin, rmax) = radii
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.abs()), hi.max(r.abs())));
    if !(rmax > 0.0) || rmax - rmin <= 1e-9 * rmax {
        return Err(Error::DegenerateConfiguration("all observed radii are equal"));
    }
    let scale = radii.iter().map(|r| r.abs()).sum::<f64>() / radii.len() as f64;

    // Scaled unknowns: (t_z, f/s, (f/s) ν_1, (f/s) ν_2) with ν_k = μ_k s^{2k}.
    let n = corrs.len();
    let mut a = DMatrix::<f64>::zeros(n, unknowns);
    let mut rhs = DVector::<f64>::zeros(n);
    for (k, c) in corrs.iter().enumerate() {
        let rho = radii[k] / scale;
        let lat = c.lateral();
        a[(k, 0)] = rho;
        let mut pw = 1.0;
        for j in 0..=n_dist {
            a[(k, 1 + j)] = -lat * pw;
            pw *= rho * rho;
        }
        rhs[k] = -rho * c.z.z;
    }
    // Column equilibration.
    let col_scale: Vec<f64> = (0..unknowns)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..unknowns {
        let s = col_scale[j];
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::DegenerateConfiguration("upgrade system is rank deficient"));
    }
    let x = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::DegenerateConfiguration("upgrade system is rank deficient"))?;
    let x: Vec<f64> = (0..unknowns).map(|j| x[j] / col_scale[j]).collect();

    let t_z = x[0];
    let f_scaled = x[1];
    let focal = f_scaled * scale;
    let mut coeffs = Vec::with_capacity(n_dist);
    for j in 0..n_dist {
        let nu = x[2 + j] / f_scaled;
        coeffs.push(nu / scale.powi(2 * (j as i32 + 1)));
    }
    let sol = UpgradeSolution {
        focal,
        t_z,
        division: DivisionModel::new(coeffs),
    };
    if !(sol.focal > 0.0) || !sol.focal.is_finite() {
        return Err(Error::NoValidSolution("non-positive focal length".into()));
    }
    if !sol.division.is_monotone_up_to(rmax) {
        return Err(Error::NoValidSolution("non-monotone distortion".into()));
    }
    Ok(vec![sol])
}
