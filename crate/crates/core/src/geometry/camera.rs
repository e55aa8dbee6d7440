use nalgebra::{Matrix2x3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard used for depth, norm and denominator checks.
pub const EPS: f64 = 1e-12;

/// Number of intrinsic parameters in the optimization vector:
/// focal, cx, cy, four distortion coefficients.
pub const INTRINSIC_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraModel {
    /// Pinhole with radial-tangential distortion (k1, k2, p1, p2).
    RadTan,
    /// Pinhole with equidistant (Kannala-Brandt) distortion (k1..k4).
    Equidistant,
}

impl CameraModel {
    pub fn name(&self) -> &'static str {
        match self {
            CameraModel::RadTan => "radtan",
            CameraModel::Equidistant => "equidistant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "radtan" => Some(CameraModel::RadTan),
            "equidistant" | "kb" | "fisheye" => Some(CameraModel::Equidistant),
            _ => None,
        }
    }
}

/// Single-focal pinhole intrinsics plus a four-coefficient distortion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub model: CameraModel,
    pub focal: f64,
    pub principal_point: Vector2<f64>,
    pub distortion: [f64; 4],
}

pub type PixelJacobian = Matrix2x3<f64>;
pub type IntrinsicJacobian = SMatrix<f64, 2, INTRINSIC_DIM>;

impl CameraIntrinsics {
    pub fn new(model: CameraModel, focal: f64, principal_point: Vector2<f64>, distortion: [f64; 4]) -> Self {
        Self {
            model,
            focal,
            principal_point,
            distortion,
        }
    }

    pub fn pinhole(model: CameraModel, focal: f64, principal_point: Vector2<f64>) -> Self {
        Self::new(model, focal, principal_point, [0.0; 4])
    }

    pub fn project(&self, x_cam: &Vector3<f64>) -> Result<Vector2<f64>> {
        let (p, _, _) = self.project_impl(x_cam, false)?;
        Ok(p)
    }

    /// Projection together with its Jacobians with respect to the camera-frame
    /// point and the intrinsic vector (see [`CameraIntrinsics::to_params`]).
    pub fn project_with_jacobians(
        &self,
        x_cam: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, PixelJacobian, IntrinsicJacobian)> {
        self.project_impl(x_cam, true)
    }

    fn project_impl(
        &self,
        x_cam: &Vector3<f64>,
        jac: bool,
    ) -> Result<(Vector2<f64>, PixelJacobian, IntrinsicJacobian)> {
        let f = self.focal;
        let mut j_point = PixelJacobian::zeros();
        let mut j_intr = IntrinsicJacobian::zeros();
        let d = self.distortion;
        let m = match self.model {
            CameraModel::RadTan => {
                let z = x_cam.z;
                if !(z > EPS) {
                    return Err(Error::NumericalDomain("point behind or on the camera plane"));
                }
                let (x, y) = (x_cam.x / z, x_cam.y / z);
                let (k1, k2, p1, p2) = (d[0], d[1], d[2], d[3]);
                let r2 = x * x + y * y;
                let rad = 1.0 + k1 * r2 + k2 * r2 * r2;
                let xd = x * rad + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
                let yd = y * rad + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
                if jac {
                    let drad = 2.0 * (k1 + 2.0 * k2 * r2);
                    let (drad_dx, drad_dy) = (drad * x, drad * y);
                    let dxd_dx = rad + x * drad_dx + 2.0 * p1 * y + 6.0 * p2 * x;
                    let dxd_dy = x * drad_dy + 2.0 * p1 * x + 2.0 * p2 * y;
                    let dyd_dx = y * drad_dx + 2.0 * p1 * x + 2.0 * p2 * y;
                    let dyd_dy = rad + y * drad_dy + 6.0 * p1 * y + 2.0 * p2 * x;
                    let dn = Matrix2x3::new(1.0 / z, 0.0, -x / z, 0.0, 1.0 / z, -y / z);
                    let dd = nalgebra::Matrix2::new(dxd_dx, dxd_dy, dyd_dx, dyd_dy);
                    j_point = f * dd * dn;
                    j_intr[(0, 0)] = xd;
                    j_intr[(1, 0)] = yd;
                    j_intr[(0, 1)] = 1.0;
                    j_intr[(1, 2)] = 1.0;
                    let r4 = r2 * r2;
                    let col = [
                        (x * r2, y * r2),
                        (x * r4, y * r4),
                        (2.0 * x * y, r2 + 2.0 * y * y),
                        (r2 + 2.0 * x * x, 2.0 * x * y),
                    ];
                    for (k, (a, b)) in col.iter().enumerate() {
                        j_intr[(0, 3 + k)] = f * a;
                        j_intr[(1, 3 + k)] = f * b;
                    }
                }
                Vector2::new(xd, yd)
            }
            CameraModel::Equidistant => {
                let n = x_cam.norm();
                if !(n > EPS) {
                    return Err(Error::NumericalDomain("ray of zero length"));
                }
                let (xx, yy, zz) = (x_cam.x, x_cam.y, x_cam.z);
                let r = (xx * xx + yy * yy).sqrt();
                if r <= 1e-10 * n {
                    if zz <= 0.0 {
                        return Err(Error::NumericalDomain("ray points straight backwards"));
                    }
                    // On-axis limit: g = 1/Z.
                    if jac {
                        j_point = Matrix2x3::new(f / zz, 0.0, 0.0, 0.0, f / zz, 0.0);
                        j_intr[(0, 1)] = 1.0;
                        j_intr[(1, 2)] = 1.0;
                    }
                    Vector2::zeros()
                } else {
                    let theta = r.atan2(zz);
                    let t2 = theta * theta;
                    let poly = 1.0 + t2 * (d[0] + t2 * (d[1] + t2 * (d[2] + t2 * d[3])));
                    let theta_d = theta * poly;
                    let g = theta_d / r;
                    if jac {
                        let dthd = 1.0
                            + t2 * (3.0 * d[0] + t2 * (5.0 * d[1] + t2 * (7.0 * d[2] + t2 * 9.0 * d[3])));
                        let rho2 = r * r + zz * zz;
                        let dth = Vector3::new(xx / r * zz / rho2, yy / r * zz / rho2, -r / rho2);
                        let dr = Vector3::new(xx / r, yy / r, 0.0);
                        let dg = dth * (dthd / r) - dr * (theta_d / (r * r));
                        j_point = Matrix2x3::new(
                            f * (g + xx * dg.x),
                            f * xx * dg.y,
                            f * xx * dg.z,
                            f * yy * dg.x,
                            f * (g + yy * dg.y),
                            f * yy * dg.z,
                        );
                        j_intr[(0, 0)] = g * xx;
                        j_intr[(1, 0)] = g * yy;
                        j_intr[(0, 1)] = 1.0;
                        j_intr[(1, 2)] = 1.0;
                        let mut tp = theta * t2;
                        for k in 0..4 {
                            j_intr[(0, 3 + k)] = f * xx * tp / r;
                            j_intr[(1, 3 + k)] = f * yy * tp / r;
                            tp *= t2;
                        }
                    }
                    Vector2::new(g * xx, g * yy)
                }
            }
        };
        Ok((f * m + self.principal_point, j_point, j_intr))
    }

    /// Distorted normalized radius as a function of the undistorted argument:
    /// the normalized image radius for RadTan, the incidence angle for
    /// Equidistant. Tangential terms are ignored.
    pub fn radial_profile(&self, s: f64) -> f64 {
        let d = self.distortion;
        let s2 = s * s;
        match self.model {
            CameraModel::RadTan => s * (1.0 + s2 * (d[0] + s2 * d[1])),
            CameraModel::Equidistant => {
                s * (1.0 + s2 * (d[0] + s2 * (d[1] + s2 * (d[2] + s2 * d[3]))))
            }
        }
    }

    pub fn radial_profile_derivative(&self, s: f64) -> f64 {
        let d = self.distortion;
        let s2 = s * s;
        match self.model {
            CameraModel::RadTan => 1.0 + s2 * (3.0 * d[0] + s2 * 5.0 * d[1]),
            CameraModel::Equidistant => {
                1.0 + s2 * (3.0 * d[0] + s2 * (5.0 * d[1] + s2 * (7.0 * d[2] + s2 * 9.0 * d[3])))
            }
        }
    }

    /// Undistorted argument at which the distorted radius reaches
    /// `pixel_radius`, provided the radial mapping is strictly increasing up to
    /// that point (checked on a fine grid). `None` if it is not.
    pub fn working_range(&self, pixel_radius: f64) -> Option<f64> {
        if !(self.focal > 0.0) {
            return None;
        }
        let target = pixel_radius / self.focal;
        let s_cap = match self.model {
            CameraModel::RadTan => 20.0,
            CameraModel::Equidistant => std::f64::consts::PI,
        };
        let steps = 4000;
        let ds = s_cap / steps as f64;
        let mut prev = 0.0;
        for k in 1..=steps {
            let s = k as f64 * ds;
            if self.radial_profile_derivative(s) <= 0.0 {
                return None;
            }
            let val = self.radial_profile(s);
            if val >= target {
                // Linear interpolation inside the last cell.
                let t = (target - prev) / (val - prev);
                return Some(s - ds + t * ds);
            }
            prev = val;
        }
        None
    }

    pub fn is_valid_for_radius(&self, pixel_radius: f64) -> bool {
        self.focal > 0.0 && self.working_range(pixel_radius).is_some()
    }

    /// `[focal, cx, cy, d0, d1, d2, d3]`.
    pub fn to_params(&self) -> [f64; INTRINSIC_DIM] {
        let d = self.distortion;
        [
            self.focal,
            self.principal_point.x,
            self.principal_point.y,
            d[0],
            d[1],
            d[2],
            d[3],
        ]
    }

    pub fn with_params(&self, p: &[f64]) -> CameraIntrinsics {
        CameraIntrinsics {
            model: self.model,
            focal: p[0],
            principal_point: Vector2::new(p[1], p[2]),
            distortion: [p[3], p[4], p[5], p[6]],
        }
    }
}

/// Distance from the principal point to the farthest image corner.
pub fn max_corner_radius(principal_point: &Vector2<f64>, image_size: [u32; 2]) -> f64 {
    let (w, h) = (image_size[0] as f64, image_size[1] as f64);
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|(x, y)| (Vector2::new(*x, *y) - principal_point).norm())
        .fold(0.0, f64::max)
}
