//! The five-stage calibration pipeline: per-image radial poses, robust rig
//! initialization, radial bundle adjustment, per-camera upgrade and final
//! bundle adjustment.

mod config;
mod data;
mod session;
mod stage1;
mod stage2;
mod stage3;
mod stage4;
mod stage5;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub use config::{CalibrationConfig, RigInitConfig, RobustFitConfig, UpgradeConfig};
pub use data::{half_line_residual, ObservationSet};
pub(crate) use data::{derive_seed, SessionData};
pub(crate) use stage1::register_image;
pub use session::{CalibrationSession, Frameset, MapPoint, Observation2D};
pub use stage1::{stage1_estimate_radial_poses, Registration, RegistrationSet};
pub use stage2::{initialize_rig_single_frameset, stage2_initialize_rig, RigInitDiagnostics};
pub use stage3::{radial_observations, stage3_radial_refinement, RadialRefinementDiagnostics};
pub use stage4::{stage4_upgrade_cameras, upgrade_camera, CameraUpgrade, CameraUpgradeReport};
pub use stage5::{reprojection_observations, stage5_final_refinement, FinalRefinementDiagnostics};

use std::time::{Duration, Instant};

use crate::error::{Result, Stage};
use crate::geometry::{CameraIntrinsics, RadialPose, RigidPose};

/// Rig known up to the forward translation of each camera: radial extrinsics
/// `P̂_i`, distortion centers and the pose of every frameset that could be
/// placed (`None` otherwise), indexed like the session's framesets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialRig {
    pub extrinsics: Vec<RadialPose>,
    pub principal_points: Vec<Vector2<f64>>,
    pub poses: Vec<Option<RigidPose>>,
}

/// Fully calibrated rig with per-frameset poses (indexed like the session).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRig {
    pub intrinsics: Vec<CameraIntrinsics>,
    pub extrinsics: Vec<RigidPose>,
    pub poses: Vec<Option<RigidPose>>,
    /// Refined map, present only when points were optimized.
    pub points: Option<Vec<Vector3<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramesetPose {
    pub frameset_id: u64,
    pub pose: RigidPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPoseDiagnostics {
    pub images_attempted: usize,
    pub images_registered: usize,
    /// Images with fewer than five correspondences.
    pub images_skipped: usize,
    /// Stage-1 inliers over correspondences, summed over registered images.
    pub inlier_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub radial_poses: RadialPoseDiagnostics,
    pub rig_init: RigInitDiagnostics,
    pub radial_refinement: RadialRefinementDiagnostics,
    pub upgrade: Vec<CameraUpgradeReport>,
    pub final_refinement: FinalRefinementDiagnostics,
    /// Defaulted choices in effect for this run.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub intrinsics: Vec<CameraIntrinsics>,
    /// Rig-to-camera transforms; camera 0 is the identity.
    pub extrinsics: Vec<RigidPose>,
    /// World-to-rig pose of every frameset that entered the final refinement.
    pub rig_poses: Vec<FramesetPose>,
    /// Refined map points; empty unless point optimization was enabled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refined_points: Vec<MapPoint>,
    pub diagnostics: Diagnostics,
    pub config: CalibrationConfig,
}

impl CalibrationResult {
    pub fn num_cameras(&self) -> usize {
        self.extrinsics.len()
    }
}

/// Wall-clock duration of each stage, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub stages: Vec<(Stage, Duration)>,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }
}

/// Runs all five stages. Deterministic for a fixed configuration (including
/// its seed), independent of the number of worker threads.
pub fn calibrate(session: &CalibrationSession, config: &CalibrationConfig) -> Result<CalibrationResult> {
    calibrate_timed(session, config).map(|(r, _)| r)
}

/// [`calibrate`], also reporting how long each stage took.
pub fn calibrate_timed(
    session: &CalibrationSession,
    config: &CalibrationConfig,
) -> Result<(CalibrationResult, StageTimings)> {
    let mut timings = StageTimings::default();
    let mut clock = Instant::now();
    let mut lap = |stage: Stage| {
        let now = Instant::now();
        timings.stages.push((stage, now - clock));
        clock = now;
    };
    session.validate()?;
    config.validate()?;
    let registration = stage1_estimate_radial_poses(session, config).map_err(|e| e.in_stage(Stage::RadialPoses))?;
    lap(Stage::RadialPoses);
    log::info!(
        "stage 1: {} of {} images registered",
        registration.entries.len(),
        registration.attempted
    );
    let (init, rig_init) =
        stage2_initialize_rig(session, &registration, config).map_err(|e| e.in_stage(Stage::RigInit))?;
    lap(Stage::RigInit);
    log::info!("stage 2: closure after {} trials", rig_init.trials_run);
    let (radial, radial_refinement) = stage3_radial_refinement(session, &registration, &init, config)
        .map_err(|e| e.in_stage(Stage::RadialBundleAdjust))?;
    lap(Stage::RadialBundleAdjust);
    log::info!(
        "stage 3: radial cost {:.6e} -> {:.6e}",
        radial_refinement.initial_cost,
        radial_refinement.final_cost
    );
    let (upgraded, upgrade) =
        stage4_upgrade_cameras(session, &registration, &radial, config).map_err(|e| e.in_stage(Stage::Upgrade))?;
    lap(Stage::Upgrade);
    let (full, final_refinement) =
        stage5_final_refinement(session, &upgraded, config).map_err(|e| e.in_stage(Stage::FinalBundleAdjust))?;
    lap(Stage::FinalBundleAdjust);
    log::info!("stage 5: reprojection RMS {:.4} px", final_refinement.rms);

    let rig_poses = full
        .poses
        .iter()
        .zip(&session.framesets)
        .filter_map(|(p, f)| p.map(|pose| FramesetPose { frameset_id: f.id, pose }))
        .collect();
    let total: usize = registration.entries.iter().map(|e| e.inliers.len()).sum();
    let inliers: usize = registration.entries.iter().map(|e| e.inlier_count).sum();
    let result = CalibrationResult {
        intrinsics: full.intrinsics,
        extrinsics: full.extrinsics,
        rig_poses,
        refined_points: full
            .points
            .map(|pts| {
                session
                    .points
                    .iter()
                    .zip(pts)
                    .map(|(p, position)| MapPoint { id: p.id, position })
                    .collect()
            })
            .unwrap_or_default(),
        diagnostics: Diagnostics {
            radial_poses: RadialPoseDiagnostics {
                images_attempted: registration.attempted,
                images_registered: registration.entries.len(),
                images_skipped: registration.skipped,
                inlier_ratio: if total == 0 { 0.0 } else { inliers as f64 / total as f64 },
            },
            rig_init,
            radial_refinement,
            upgrade,
            final_refinement,
            warnings: config.default_warnings(),
        },
        config: config.clone(),
    };
    Ok((result, timings))
}
