use nalgebra::{DVector, Vector2, Vector3};

use super::dmat;
use super::lm::{lm_minimize, BlockLayout, LeastSquaresProblem, LmConfig, LmReport, ResidualEval};
use super::residuals::upgrade_block;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::par::Execution;
use crate::robust::RobustLoss;

/// A pixel and the matching point in the camera frame up to `t_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpgradeObservation {
    pub pixel: Vector2<f64>,
    pub z: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct UpgradeRefinement {
    pub intrinsics: CameraIntrinsics,
    pub t_z: f64,
    pub report: LmReport,
}

struct Problem<'a> {
    obs: &'a [UpgradeObservation],
}

impl LeastSquaresProblem for Problem<'_> {
    type State = (CameraIntrinsics, f64);

    fn layout(&self) -> BlockLayout {
        BlockLayout {
            global: vec![6],
            local: vec![],
        }
    }

    fn num_residuals(&self) -> usize {
        self.obs.len()
    }

    fn evaluate(&self, s: &Self::State, k: usize, jac: bool) -> Option<ResidualEval> {
        let o = &self.obs[k];
        let (r, j) = upgrade_block(&s.0, s.1, &o.z, &o.pixel).ok()?;
        Some(ResidualEval {
            residual: DVector::from_column_slice(r.as_slice()),
            global: if jac { vec![(0, dmat(&j))] } else { vec![] },
            local: None,
        })
    }

    fn retract(&self, s: &Self::State, g: &[DVector<f64>], _l: &[DVector<f64>]) -> Self::State {
        let d = &g[0];
        let c = &s.0;
        let mut cam = *c;
        cam.focal += d[0];
        for k in 0..4 {
            cam.distortion[k] += d[1 + k];
        }
        (cam, s.1 + d[5])
    }
}

pub fn upgrade_cost(
    intrinsics: &CameraIntrinsics,
    t_z: f64,
    observations: &[UpgradeObservation],
    loss: &RobustLoss,
) -> f64 {
    observations
        .iter()
        .filter_map(|o| upgrade_block(intrinsics, t_z, &o.z, &o.pixel).ok())
        .map(|(r, _)| loss.cost(r.norm_squared()))
        .sum()
}

/// Refines focal length, all four distortion coefficients and the forward
/// translation of one camera against its reprojection error; the principal
/// point is held fixed. `max_pixel_radius` bounds the range on which the
/// refined distortion must stay monotone.
pub fn refine_upgrade(
    initial: &CameraIntrinsics,
    t_z: f64,
    observations: &[UpgradeObservation],
    max_pixel_radius: f64,
    loss: &RobustLoss,
    config: &LmConfig,
    exec: Execution,
) -> Result<UpgradeRefinement> {
    let problem = Problem { obs: observations };
    let ((intrinsics, t_z), report) = lm_minimize(&problem, (*initial, t_z), loss, config, exec)?;
    if !(intrinsics.focal > 0.0) {
        return Err(Error::NoValidSolution("refined focal length is not positive".into()));
    }
    if !intrinsics.is_valid_for_radius(max_pixel_radius) {
        return Err(Error::NoValidSolution(format!(
            "refined distortion is not monotone up to {max_pixel_radius:.0} px (focal {:.2}, distortion {:?})",
            intrinsics.focal, intrinsics.distortion
        )));
    }
    Ok(UpgradeRefinement {
        intrinsics,
        t_z,
        report,
    })
}
