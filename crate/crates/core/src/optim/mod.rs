//! Levenberg-Marquardt least squares and the refinement problems built on it:
//! radial bundle adjustment, per-camera upgrade refinement, full bundle
//! adjustment and robust pose averaging.

mod full_ba;
mod lm;
mod pose_graph;
mod radial_ba;
pub mod residuals;
mod upgrade;

pub use full_ba::{full_bundle_adjust, reprojection_cost, FullBaInput, FullBaOutput};
pub use lm::{
    lm_minimize, total_cost, BlockLayout, LeastSquaresProblem, LmConfig, LmReport, ResidualEval, Termination,
};
pub use pose_graph::{optimize_pose_graph, pose_graph_cost, PoseGraphInput, PoseGraphOutput, PoseMeasurement};
pub use radial_ba::{radial_bundle_adjust, radial_cost, RadialBaInput, RadialBaOutput};
pub use upgrade::{refine_upgrade, upgrade_cost, UpgradeObservation, UpgradeRefinement};

use nalgebra::{DMatrix, Vector2};

/// One 2D observation of a map point by camera `camera` in the frameset whose
/// rig pose is `poses[pose]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub pose: usize,
    pub point: usize,
    pub pixel: Vector2<f64>,
}

/// Index of each non-fixed pose in the local block list.
pub(crate) fn pose_blocks(num_poses: usize, fixed: Option<usize>) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut map = vec![None; num_poses];
    let mut inv = Vec::new();
    for (k, m) in map.iter_mut().enumerate() {
        if Some(k) != fixed {
            *m = Some(inv.len());
            inv.push(k);
        }
    }
    (map, inv)
}

pub(crate) fn dmat<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}
