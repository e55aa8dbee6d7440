use nalgebra::{DVector, Vector3};

use super::lm::{lm_minimize, BlockLayout, LeastSquaresProblem, LmConfig, LmReport, ResidualEval};
use super::residuals::reprojection_block;
use super::{dmat, pose_blocks, Observation};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidPose};
use crate::par::Execution;
use crate::robust::RobustLoss;

/// Number of map points pinned to lock the map gauge when points are free.
pub const PINNED_POINTS: usize = 3;

#[derive(Debug, Clone)]
pub struct FullBaInput<'a> {
    pub rig: Vec<RigidPose>,
    pub poses: Vec<RigidPose>,
    pub intrinsics: Vec<CameraIntrinsics>,
    pub observations: &'a [Observation],
    pub points: Vec<Vector3<f64>>,
    /// Pose held constant to fix the gauge.
    pub fixed_pose: usize,
    pub optimize_points: bool,
}

#[derive(Debug, Clone)]
pub struct FullBaOutput {
    pub rig: Vec<RigidPose>,
    pub poses: Vec<RigidPose>,
    pub intrinsics: Vec<CameraIntrinsics>,
    pub points: Vec<Vector3<f64>>,
    pub report: LmReport,
}

#[derive(Clone)]
struct State {
    rig: Vec<RigidPose>,
    poses: Vec<RigidPose>,
    intrinsics: Vec<CameraIntrinsics>,
    points: Vec<Vector3<f64>>,
}

enum Mode {
    /// Rig poses are local blocks; points are constants.
    FixedPoints { pose_local: Vec<Option<usize>>, local_pose: Vec<usize> },
    /// Rig poses are global blocks; points are local blocks.
    FreePoints {
        pose_global: Vec<Option<usize>>,
        global_pose: Vec<usize>,
        point_local: Vec<Option<usize>>,
        local_point: Vec<usize>,
    },
}

struct Problem<'a> {
    obs: &'a [Observation],
    num_cameras: usize,
    mode: Mode,
}

impl LeastSquaresProblem for Problem<'_> {
    type State = State;

    fn layout(&self) -> BlockLayout {
        let mut global = vec![6; self.num_cameras];
        global.extend(std::iter::repeat_n(7, self.num_cameras));
        match &self.mode {
            Mode::FixedPoints { local_pose, .. } => BlockLayout {
                global,
                local: vec![6; local_pose.len()],
            },
            Mode::FreePoints { global_pose, local_point, .. } => {
                global.extend(std::iter::repeat_n(6, global_pose.len()));
                BlockLayout {
                    global,
                    local: vec![3; local_point.len()],
                }
            }
        }
    }

    fn num_residuals(&self) -> usize {
        self.obs.len()
    }

    fn evaluate(&self, s: &State, k: usize, jac: bool) -> Option<ResidualEval> {
        let o = &self.obs[k];
        let b = reprojection_block(
            &s.rig[o.camera],
            &s.poses[o.pose],
            &s.intrinsics[o.camera],
            &s.points[o.point],
            &o.pixel,
        )
        .ok()?;
        let residual = DVector::from_column_slice(b.residual.as_slice());
        if !jac {
            return Some(ResidualEval { residual, global: vec![], local: None });
        }
        let mut global = vec![
            (o.camera, dmat(&b.d_rig)),
            (self.num_cameras + o.camera, dmat(&b.d_intrinsics)),
        ];
        let local = match &self.mode {
            Mode::FixedPoints { pose_local, .. } => pose_local[o.pose].map(|l| (l, dmat(&b.d_pose))),
            Mode::FreePoints { pose_global, point_local, .. } => {
                if let Some(g) = pose_global[o.pose] {
                    global.push((2 * self.num_cameras + g, dmat(&b.d_pose)));
                }
                point_local[o.point].map(|l| (l, dmat(&b.d_point)))
            }
        };
        Some(ResidualEval { residual, global, local })
    }

    fn retract(&self, s: &State, g: &[DVector<f64>], l: &[DVector<f64>]) -> State {
        let n = self.num_cameras;
        let mut out = s.clone();
        for i in 0..n {
            out.rig[i] = s.rig[i].retract(g[i].as_slice());
            let mut p = s.intrinsics[i].to_params();
            for (k, v) in p.iter_mut().enumerate() {
                *v += g[n + i][k];
            }
            out.intrinsics[i] = s.intrinsics[i].with_params(&p);
        }
        match &self.mode {
            Mode::FixedPoints { local_pose, .. } => {
                for (lb, &pose) in local_pose.iter().enumerate() {
                    out.poses[pose] = s.poses[pose].retract(l[lb].as_slice());
                }
            }
            Mode::FreePoints { global_pose, local_point, .. } => {
                for (gb, &pose) in global_pose.iter().enumerate() {
                    out.poses[pose] = s.poses[pose].retract(g[2 * n + gb].as_slice());
                }
                for (lb, &pt) in local_point.iter().enumerate() {
                    out.points[pt] += Vector3::new(l[lb][0], l[lb][1], l[lb][2]);
                }
            }
        }
        out
    }
}

/// Robustified reprojection cost `Σ ρ(‖π_θi(P_i Q_j X_p) − x‖²)`. Observations
/// outside the projection domain are skipped.
pub fn reprojection_cost(
    rig: &[RigidPose],
    poses: &[RigidPose],
    intrinsics: &[CameraIntrinsics],
    observations: &[Observation],
    points: &[Vector3<f64>],
    loss: &RobustLoss,
) -> f64 {
    observations
        .iter()
        .filter_map(|o| {
            let x = rig[o.camera].transform(&poses[o.pose].transform(&points[o.point]));
            intrinsics[o.camera].project(&x).ok().map(|p| p - o.pixel)
        })
        .map(|r| loss.cost(r.norm_squared()))
        .sum()
}

/// Joint refinement of camera extrinsics, intrinsics and rig poses (and
/// optionally map points) by minimizing the robust reprojection error.
pub fn full_bundle_adjust(
    input: FullBaInput<'_>,
    loss: &RobustLoss,
    config: &LmConfig,
    exec: Execution,
) -> Result<FullBaOutput> {
    let n = input.rig.len();
    if input.intrinsics.len() != n {
        return Err(Error::Precondition("one intrinsic set per camera required".into()));
    }
    let mode = if input.optimize_points {
        let (pose_global, global_pose) = pose_blocks(input.poses.len(), Some(input.fixed_pose));
        let mut counts = vec![0usize; input.points.len()];
        for o in input.observations {
            counts[o.point] += 1;
        }
        let mut order: Vec<usize> = (0..input.points.len()).filter(|k| counts[*k] > 0).collect();
        order.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
        let pinned: Vec<usize> = order.iter().take(PINNED_POINTS).copied().collect();
        let mut point_local = vec![None; input.points.len()];
        let mut local_point = Vec::new();
        for k in order {
            if !pinned.contains(&k) {
                point_local[k] = Some(local_point.len());
                local_point.push(k);
            }
        }
        Mode::FreePoints {
            pose_global,
            global_pose,
            point_local,
            local_point,
        }
    } else {
        let (pose_local, local_pose) = pose_blocks(input.poses.len(), Some(input.fixed_pose));
        Mode::FixedPoints { pose_local, local_pose }
    };
    let problem = Problem {
        obs: input.observations,
        num_cameras: n,
        mode,
    };
    let init = State {
        rig: input.rig,
        poses: input.poses,
        intrinsics: input.intrinsics,
        points: input.points,
    };
    let (s, report) = lm_minimize(&problem, init, loss, config, exec)?;
    Ok(FullBaOutput {
        rig: s.rig,
        poses: s.poses,
        intrinsics: s.intrinsics,
        points: s.points,
        report,
    })
}
