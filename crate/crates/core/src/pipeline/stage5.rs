use serde::{Deserialize, Serialize};

use super::config::CalibrationConfig;
use super::data::{ObservationSet, SessionData};
use super::session::CalibrationSession;
use super::FullRig;
use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::optim::{full_bundle_adjust, FullBaInput, LmReport, Observation};
use crate::robust::RobustLoss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRefinementDiagnostics {
    pub observations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Per-coordinate RMS reprojection error over observations within the gate.
    pub rms: f64,
    pub report: LmReport,
}

/// Correspondences of every placed frameset whose reprojection error under
/// `rig` is at most `gate` pixels.
pub fn reprojection_observations(session: &CalibrationSession, rig: &FullRig, gate: f64) -> Result<ObservationSet> {
    let data = SessionData::new(session)?;
    let positions = rig.points.as_ref().unwrap_or(&data.positions);
    let mut set = ObservationSet::default();
    for (j, q) in rig.poses.iter().enumerate() {
        let Some(q) = q else { continue };
        let p = set.frameset_of_pose.len();
        set.frameset_of_pose.push(j);
        for (i, img) in data.images[j].iter().enumerate() {
            let to_cam = rig.extrinsics[i].compose(q);
            for (px, &pt) in img.pixels.iter().zip(&img.points) {
                let Ok(pred) = rig.intrinsics[i].project(&to_cam.transform(&positions[pt])) else { continue };
                if (pred - px).norm() <= gate {
                    set.observations.push(Observation {
                        camera: i,
                        pose: p,
                        point: pt,
                        pixel: *px,
                    });
                }
            }
        }
    }
    Ok(set)
}

/// Per-coordinate RMS of reprojection errors at most `gate`.
pub(crate) fn gated_rms(rig: &FullRig, poses: &[RigidPose], set: &ObservationSet, positions: &[nalgebra::Vector3<f64>], gate: f64) -> f64 {
    let (mut sq, mut count) = (0.0, 0usize);
    for o in &set.observations {
        let x = rig.extrinsics[o.camera].transform(&poses[o.pose].transform(&positions[o.point]));
        if let Ok(p) = rig.intrinsics[o.camera].project(&x) {
            let e = (p - o.pixel).norm_squared();
            if e <= gate * gate {
                sq += e;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        (sq / (2 * count) as f64).sqrt()
    }
}

/// Final bundle adjustment of all rig parameters over gated correspondences,
/// followed by the gauge change that makes camera 0 the rig frame.
pub fn stage5_final_refinement(
    session: &CalibrationSession,
    rig: &FullRig,
    config: &CalibrationConfig,
) -> Result<(FullRig, FinalRefinementDiagnostics)> {
    let set = reprojection_observations(session, rig, config.final_gate)?;
    if set.observations.is_empty() {
        return Err(Error::EmptyRegistration);
    }
    let mut counts = vec![0usize; set.frameset_of_pose.len()];
    for o in &set.observations {
        counts[o.pose] += 1;
    }
    let fixed_pose = (0..counts.len())
        .max_by(|a, b| counts[*a].cmp(&counts[*b]).then(b.cmp(a)))
        .expect("non-empty");
    let positions: Vec<_> = rig
        .points
        .clone()
        .unwrap_or_else(|| session.points.iter().map(|p| p.position).collect());
    let input = FullBaInput {
        rig: rig.extrinsics.clone(),
        poses: set.frameset_of_pose.iter().map(|&j| rig.poses[j].unwrap()).collect(),
        intrinsics: rig.intrinsics.clone(),
        observations: &set.observations,
        points: positions,
        fixed_pose,
        optimize_points: config.optimize_points,
    };
    let loss = RobustLoss::Cauchy {
        scale: config.final_loss_scale,
    };
    let out = full_bundle_adjust(input, &loss, &config.lm, config.execution)?;

    // Gauge: P_0 becomes the identity.
    let g = out.rig[0];
    let g_inv = g.inverse();
    let mut extrinsics: Vec<RigidPose> = out.rig.iter().map(|p| p.compose(&g_inv)).collect();
    extrinsics[0] = RigidPose::identity();
    let poses_opt: Vec<RigidPose> = out.poses.iter().map(|q| g.compose(q)).collect();
    let mut poses = vec![None; rig.poses.len()];
    for (p, &j) in set.frameset_of_pose.iter().enumerate() {
        poses[j] = Some(poses_opt[p]);
    }
    let result = FullRig {
        intrinsics: out.intrinsics,
        extrinsics,
        poses,
        points: config.optimize_points.then_some(out.points.clone()),
    };
    let rms = gated_rms(&result, &poses_opt, &set, &out.points, config.final_gate);
    Ok((
        result,
        FinalRefinementDiagnostics {
            observations: set.observations.len(),
            initial_cost: out.report.initial_cost,
            final_cost: out.report.final_cost,
            rms,
            report: out.report,
        },
    ))
}
