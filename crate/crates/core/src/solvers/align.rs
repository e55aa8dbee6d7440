use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{RigidPose, Rotation};

/// Least-squares rigid alignment (no scale) mapping `source` onto `target`.
pub fn align_rigid(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidPose> {
    let w = vec![1.0; source.len()];
    align_rigid_weighted(source, target, &w)
}

/// Weighted variant of [`align_rigid`].
pub fn align_rigid_weighted(source: &[Vector3<f64>], target: &[Vector3<f64>], weights: &[f64]) -> Result<RigidPose> {
    if source.len() != target.len() || source.len() != weights.len() {
        return Err(Error::Precondition("alignment inputs differ in length".into()));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration("alignment needs at least 3 points"));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Precondition("alignment weights sum to zero".into()));
    }
    let cs = source.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vector3<f64>>() / wsum;
    let ct = target.iter().zip(weights).map(|(p, w)| p * *w).sum::<Vector3<f64>>() / wsum;
    let mut h = Matrix3::<f64>::zeros();
    let mut spread = Matrix3::<f64>::zeros();
    for ((s, t), w) in source.iter().zip(target).zip(weights) {
        let (ds, dt) = (s - cs, t - ct);
        h += *w * dt * ds.transpose();
        spread += *w * ds * ds.transpose();
    }
    let ev = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = ev.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(ev[1] > 1e-12 * ev[0].max(1e-300)) {
        return Err(Error::DegenerateConfiguration("collinear alignment points"));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = Rotation::from_matrix(&(u * d * v_t));
    let translation = ct - rotation.rotate(&cs);
    Ok(RigidPose::new(rotation, translation))
}
