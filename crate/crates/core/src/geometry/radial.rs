use nalgebra::{Matrix2, Vector2, Vector3};

use super::camera::EPS;
use super::pose::RadialPose;
use crate::error::{Error, Result};

/// Orthogonal projection of `v` onto the line spanned by `u`.
pub fn project_onto_line(u: &Vector2<f64>, v: &Vector2<f64>) -> Vector2<f64> {
    u * (u.dot(v) / u.dot(u))
}

/// Radial residual `π_r(u, v) − v` for `u = A X + b` and `v = x − c`. Its norm
/// is the distance from the centered observation to the projected radial line.
pub fn radial_residual(
    pose: &RadialPose,
    principal_point: &Vector2<f64>,
    point: &Vector3<f64>,
    pixel: &Vector2<f64>,
) -> Result<Vector2<f64>> {
    let u = pose.project(point);
    let v = pixel - principal_point;
    residual_from_direction(&u, &v)
}

pub fn residual_from_direction(u: &Vector2<f64>, v: &Vector2<f64>) -> Result<Vector2<f64>> {
    if u.norm() <= EPS {
        return Err(Error::DegenerateProjection);
    }
    Ok(project_onto_line(u, v) - v)
}

/// Residual with Jacobians with respect to `u` and `v`.
pub fn residual_with_jacobians(
    u: &Vector2<f64>,
    v: &Vector2<f64>,
) -> Result<(Vector2<f64>, Matrix2<f64>, Matrix2<f64>)> {
    let uu = u.dot(u);
    if uu.sqrt() <= EPS {
        return Err(Error::DegenerateProjection);
    }
    let uv = u.dot(v);
    let s = uv / uu;
    let ds_du = v.transpose() / uu - u.transpose() * (2.0 * uv / (uu * uu));
    let d_du = u * ds_du + Matrix2::identity() * s;
    let d_dv = u * u.transpose() / uu - Matrix2::identity();
    Ok((u * s - v, d_du, d_dv))
}
