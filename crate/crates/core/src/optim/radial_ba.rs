use nalgebra::{DVector, Vector2, Vector3};

use super::lm::{lm_minimize, BlockLayout, LeastSquaresProblem, LmConfig, LmReport, ResidualEval};
use super::residuals::radial_block;
use super::{dmat, pose_blocks, Observation};
use crate::error::Result;
use crate::geometry::{radial_residual, RadialPose, RigidPose};
use crate::par::Execution;
use crate::robust::RobustLoss;

/// Minimum support for refining a camera's principal point.
pub const MIN_PP_OBSERVATIONS: usize = 30;
pub const MIN_PP_FRAMESETS: usize = 2;

#[derive(Debug, Clone)]
pub struct RadialBaInput<'a> {
    pub rig: Vec<RadialPose>,
    pub poses: Vec<RigidPose>,
    pub principal_points: Vec<Vector2<f64>>,
    pub observations: &'a [Observation],
    pub points: &'a [Vector3<f64>],
    /// Pose held constant to fix the gauge.
    pub fixed_pose: usize,
}

#[derive(Debug, Clone)]
pub struct RadialBaOutput {
    pub rig: Vec<RadialPose>,
    pub poses: Vec<RigidPose>,
    pub principal_points: Vec<Vector2<f64>>,
    pub principal_point_refined: Vec<bool>,
    pub report: LmReport,
}

#[derive(Clone)]
struct State {
    rig: Vec<RadialPose>,
    poses: Vec<RigidPose>,
    pp: Vec<Vector2<f64>>,
}

struct Problem<'a> {
    obs: &'a [Observation],
    points: &'a [Vector3<f64>],
    pose_local: Vec<Option<usize>>,
    local_pose: Vec<usize>,
    pp_block: Vec<Option<usize>>,
    num_cameras: usize,
}

impl LeastSquaresProblem for Problem<'_> {
    type State = State;

    fn layout(&self) -> BlockLayout {
        let free_pp = self.pp_block.iter().filter(|b| b.is_some()).count();
        let mut global = vec![5; self.num_cameras];
        global.extend(std::iter::repeat_n(2, free_pp));
        BlockLayout {
            global,
            local: vec![6; self.local_pose.len()],
        }
    }

    fn num_residuals(&self) -> usize {
        self.obs.len()
    }

    fn evaluate(&self, s: &State, k: usize, jac: bool) -> Option<ResidualEval> {
        let o = &self.obs[k];
        let b = radial_block(&s.rig[o.camera], &s.poses[o.pose], &s.pp[o.camera], &self.points[o.point], &o.pixel).ok()?;
        let residual = DVector::from_column_slice(b.residual.as_slice());
        if !jac {
            return Some(ResidualEval { residual, global: vec![], local: None });
        }
        let mut global = vec![(o.camera, dmat(&b.d_rig))];
        if let Some(pb) = self.pp_block[o.camera] {
            global.push((pb, dmat(&b.d_principal_point)));
        }
        let local = self.pose_local[o.pose].map(|l| (l, dmat(&b.d_pose)));
        Some(ResidualEval { residual, global, local })
    }

    fn retract(&self, s: &State, g: &[DVector<f64>], l: &[DVector<f64>]) -> State {
        let mut out = s.clone();
        for i in 0..self.num_cameras {
            out.rig[i] = s.rig[i].retract(g[i].as_slice());
            if let Some(pb) = self.pp_block[i] {
                out.pp[i] += Vector2::new(g[pb][0], g[pb][1]);
            }
        }
        for (lb, &pose) in self.local_pose.iter().enumerate() {
            out.poses[pose] = s.poses[pose].retract(l[lb].as_slice());
        }
        out
    }
}

/// Robustified radial reprojection cost `Σ ρ(‖π_r(P̂_i Q_j X, x − c_i) − (x − c_i)‖²)`.
/// Observations that project onto the distortion center are skipped.
pub fn radial_cost(
    rig: &[RadialPose],
    poses: &[RigidPose],
    principal_points: &[Vector2<f64>],
    observations: &[Observation],
    points: &[Vector3<f64>],
    loss: &RobustLoss,
) -> f64 {
    observations
        .iter()
        .filter_map(|o| {
            let pose = rig[o.camera].compose_rigid(&poses[o.pose]);
            radial_residual(&pose, &principal_points[o.camera], &points[o.point], &o.pixel).ok()
        })
        .map(|r| loss.cost(r.norm_squared()))
        .sum()
}

/// Refines radial camera extrinsics, rig poses and (where supported by enough
/// observations) principal points by minimizing the robust radial
/// reprojection error with the map points held fixed.
pub fn radial_bundle_adjust(
    input: RadialBaInput<'_>,
    loss: &RobustLoss,
    config: &LmConfig,
    exec: Execution,
) -> Result<RadialBaOutput> {
    let n = input.rig.len();
    let mut counts = vec![0usize; n];
    let mut framesets: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n];
    for o in input.observations {
        counts[o.camera] += 1;
        framesets[o.camera].insert(o.pose);
    }
    let mut pp_block = vec![None; n];
    let mut next = n;
    for i in 0..n {
        if counts[i] >= MIN_PP_OBSERVATIONS && framesets[i].len() >= MIN_PP_FRAMESETS {
            pp_block[i] = Some(next);
            next += 1;
        }
    }
    let (pose_local, local_pose) = pose_blocks(input.poses.len(), Some(input.fixed_pose));
    let problem = Problem {
        obs: input.observations,
        points: input.points,
        pose_local,
        local_pose,
        pp_block: pp_block.clone(),
        num_cameras: n,
    };
    let init = State {
        rig: input.rig,
        poses: input.poses,
        pp: input.principal_points,
    };
    let (s, report) = lm_minimize(&problem, init, loss, config, exec)?;
    Ok(RadialBaOutput {
        rig: s.rig,
        poses: s.poses,
        principal_points: s.pp,
        principal_point_refined: pp_block.iter().map(|b| b.is_some()).collect(),
        report,
    })
}
