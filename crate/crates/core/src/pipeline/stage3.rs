use serde::{Deserialize, Serialize};

use super::config::CalibrationConfig;
use super::data::{ObservationSet, SessionData};
use super::session::CalibrationSession;
use super::stage1::RegistrationSet;
use super::RadialRig;
use crate::error::{Error, Result};
use crate::optim::{radial_bundle_adjust, LmReport, Observation, RadialBaInput};
use crate::robust::RobustLoss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialRefinementDiagnostics {
    pub observations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub principal_point_refined: Vec<bool>,
    pub report: LmReport,
}

/// Stage-1 inlier correspondences of every registered image whose frameset
/// has a rig pose.
pub fn radial_observations(session: &CalibrationSession, reg: &RegistrationSet, rig: &RadialRig) -> Result<ObservationSet> {
    let data = SessionData::new(session)?;
    let mut set = ObservationSet::default();
    let mut pose_of = vec![None; reg.num_framesets];
    for (j, q) in rig.poses.iter().enumerate() {
        if q.is_some() {
            pose_of[j] = Some(set.frameset_of_pose.len());
            set.frameset_of_pose.push(j);
        }
    }
    for e in &reg.entries {
        let Some(p) = pose_of[e.frameset] else { continue };
        let img = &data.images[e.frameset][e.camera];
        for (k, _) in e.inliers.iter().enumerate().filter(|(_, b)| **b) {
            set.observations.push(Observation {
                camera: e.camera,
                pose: p,
                point: img.points[k],
                pixel: img.pixels[k],
            });
        }
    }
    Ok(set)
}

/// Radial bundle adjustment of extrinsics, rig poses and distortion centers
/// with the map fixed; the most observed frameset anchors the gauge.
pub fn stage3_radial_refinement(
    session: &CalibrationSession,
    reg: &RegistrationSet,
    rig: &RadialRig,
    config: &CalibrationConfig,
) -> Result<(RadialRig, RadialRefinementDiagnostics)> {
    let set = radial_observations(session, reg, rig)?;
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
    let points: Vec<_> = session.points.iter().map(|p| p.position).collect();
    let input = RadialBaInput {
        rig: rig.extrinsics.clone(),
        poses: set.frameset_of_pose.iter().map(|&j| rig.poses[j].unwrap()).collect(),
        principal_points: rig.principal_points.clone(),
        observations: &set.observations,
        points: &points,
        fixed_pose,
    };
    let loss = RobustLoss::Cauchy {
        scale: config.radial_loss_scale,
    };
    let out = radial_bundle_adjust(input, &loss, &config.lm, config.execution)?;
    let mut poses = vec![None; rig.poses.len()];
    for (p, &j) in set.frameset_of_pose.iter().enumerate() {
        poses[j] = Some(out.poses[p]);
    }
    let diag = RadialRefinementDiagnostics {
        observations: set.observations.len(),
        initial_cost: out.report.initial_cost,
        final_cost: out.report.final_cost,
        principal_point_refined: out.principal_point_refined,
        report: out.report,
    };
    Ok((
        RadialRig {
            extrinsics: out.rig,
            principal_points: out.principal_points,
            poses,
        },
        diag,
    ))
}
