use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{RadialPose, RigidPose, Rotation};

/// Default relative conditioning bound on the stacked radial rotation rows.
pub const RIG_POSE_CONDITIONING: f64 = 1e-6;

/// Ratio of smallest to largest singular value of the stacked `A_i` rows.
/// Zero when all principal axes are parallel.
pub fn axis_conditioning<'a>(poses: impl IntoIterator<Item = &'a RadialPose>) -> f64 {
    let mut ata = Matrix3::<f64>::zeros();
    for p in poses {
        let a = p.a();
        ata += a.transpose() * a;
    }
    let ev = ata.symmetric_eigenvalues();
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| (lo.min(*e), hi.max(*e)));
    if hi <= 0.0 {
        return 0.0;
    }
    (lo.max(0.0) / hi).sqrt()
}

/// Rig pose `Q` from pairs of (camera radial extrinsic `P̂_i`, observed radial
/// pose `T̂_ij`) with `T̂_ij = P̂_i Q`.
pub fn solve_rig_pose(assigned: &[(RadialPose, RadialPose)]) -> Result<RigidPose> {
    solve_rig_pose_conditioned(assigned, RIG_POSE_CONDITIONING)
}

pub fn solve_rig_pose_conditioned(assigned: &[(RadialPose, RadialPose)], min_conditioning: f64) -> Result<RigidPose> {
    if assigned.len() < 2 {
        return Err(Error::Precondition(format!(
            "rig pose needs at least 2 cameras, got {}",
            assigned.len()
        )));
    }
    if axis_conditioning(assigned.iter().map(|(p, _)| p)) <= min_conditioning {
        return Err(Error::ParallelAxesDegenerate);
    }

    // Rotation: orthogonal Procrustes on Σ A_iᵀ C_ij.
    let mut m = Matrix3::<f64>::zeros();
    let mut ata = Matrix3::<f64>::zeros();
    let mut atr = Vector3::<f64>::zeros();
    for (p, t) in assigned {
        let a = p.a();
        m += a.transpose() * t.a();
        ata += a.transpose() * a;
        atr += a.transpose() * (t.b() - p.b());
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = Rotation::from_matrix(&(u * d * v_t));

    // Translation: least squares on A_i t = d_ij − b_i.
    let t = ata.cholesky().ok_or(Error::ParallelAxesDegenerate)?.solve(&atr);
    Ok(RigidPose::new(rotation, t))
}
