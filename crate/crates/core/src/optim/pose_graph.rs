use nalgebra::DVector;

use super::lm::{lm_minimize, BlockLayout, LeastSquaresProblem, LmConfig, LmReport, ResidualEval};
use super::residuals::pose_graph_block;
use super::{dmat, pose_blocks};
use crate::error::Result;
use crate::geometry::{RadialPose, RigidPose};
use crate::par::Execution;
use crate::robust::RobustLoss;

/// A measured radial pose `T̂_ij` of camera `camera` in frameset `pose`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMeasurement {
    pub camera: usize,
    pub pose: usize,
    pub measured: RadialPose,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct PoseGraphInput<'a> {
    pub rig: Vec<RadialPose>,
    pub poses: Vec<RigidPose>,
    pub measurements: &'a [PoseMeasurement],
    /// Weight of the squared translation discrepancy relative to the squared
    /// rotation angle, in (rad / map unit)².
    pub translation_weight: f64,
    pub fixed_pose: usize,
}

#[derive(Debug, Clone)]
pub struct PoseGraphOutput {
    pub rig: Vec<RadialPose>,
    pub poses: Vec<RigidPose>,
    pub report: LmReport,
}

struct Problem<'a> {
    meas: &'a [PoseMeasurement],
    lambda: f64,
    num_cameras: usize,
    pose_local: Vec<Option<usize>>,
    local_pose: Vec<usize>,
}

type State = (Vec<RadialPose>, Vec<RigidPose>);

impl LeastSquaresProblem for Problem<'_> {
    type State = State;

    fn layout(&self) -> BlockLayout {
        BlockLayout {
            global: vec![5; self.num_cameras],
            local: vec![6; self.local_pose.len()],
        }
    }

    fn num_residuals(&self) -> usize {
        self.meas.len()
    }

    fn evaluate(&self, s: &State, k: usize, jac: bool) -> Option<ResidualEval> {
        let m = &self.meas[k];
        let (r, jr, jp) = pose_graph_block(&s.0[m.camera], &s.1[m.pose], &m.measured, self.lambda);
        let w = m.weight.sqrt();
        let residual = DVector::from_column_slice((r * w).as_slice());
        if !jac {
            return Some(ResidualEval { residual, global: vec![], local: None });
        }
        Some(ResidualEval {
            residual,
            global: vec![(m.camera, dmat(&(jr * w)))],
            local: self.pose_local[m.pose].map(|l| (l, dmat(&(jp * w)))),
        })
    }

    fn retract(&self, s: &State, g: &[DVector<f64>], l: &[DVector<f64>]) -> State {
        let rig = s.0.iter().zip(g).map(|(p, d)| p.retract(d.as_slice())).collect();
        let mut poses = s.1.clone();
        for (lb, &pose) in self.local_pose.iter().enumerate() {
            poses[pose] = s.1[pose].retract(l[lb].as_slice());
        }
        (rig, poses)
    }
}

/// `Σ ρ(w · d(T̂_ij, P̂_i Q_j))` with `d` the squared rotation angle plus the
/// weighted squared 2-row translation difference.
pub fn pose_graph_cost(
    rig: &[RadialPose],
    poses: &[RigidPose],
    measurements: &[PoseMeasurement],
    translation_weight: f64,
    loss: &RobustLoss,
) -> f64 {
    measurements
        .iter()
        .map(|m| {
            let (r, _, _) = pose_graph_block(&rig[m.camera], &poses[m.pose], &m.measured, translation_weight);
            loss.cost(m.weight * r.norm_squared())
        })
        .sum()
}

/// Robust averaging of radial camera extrinsics and rig poses against the
/// per-image radial poses.
pub fn optimize_pose_graph(
    input: PoseGraphInput<'_>,
    loss: &RobustLoss,
    config: &LmConfig,
    exec: Execution,
) -> Result<PoseGraphOutput> {
    let (pose_local, local_pose) = pose_blocks(input.poses.len(), Some(input.fixed_pose));
    let problem = Problem {
        meas: input.measurements,
        lambda: input.translation_weight,
        num_cameras: input.rig.len(),
        pose_local,
        local_pose,
    };
    let ((rig, poses), report) = lm_minimize(&problem, (input.rig, input.poses), loss, config, exec)?;
    Ok(PoseGraphOutput { rig, poses, report })
}
