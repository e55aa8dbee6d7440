use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::optim::LmConfig;
use crate::par::Execution;
use crate::robust::RansacConfig;

/// RANSAC settings without a seed; seeds derive from the top-level one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustFitConfig {
    /// Inlier threshold in pixels.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
}

impl Default for RobustFitConfig {
    fn default() -> Self {
        let r = RansacConfig::default();
        Self {
            threshold: r.threshold,
            confidence: r.confidence,
            max_iterations: r.max_iterations,
            min_inliers: r.min_inliers,
        }
    }
}

impl RobustFitConfig {
    pub fn with_seed(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            threshold: self.threshold,
            confidence: self.confidence,
            max_iterations: self.max_iterations,
            min_inliers: self.min_inliers,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigInitConfig {
    pub trials: usize,
    /// Minimum relative conditioning of the stacked principal-axis rows before
    /// a frameset may seed a trial or have its pose solved.
    pub min_conditioning: f64,
    /// Minimum conditioning of the principal axes of the averaged rig.
    pub min_rig_conditioning: f64,
    /// A closed trial whose radial inlier ratio exceeds this ends the search.
    pub early_exit_inlier_ratio: f64,
    /// Trials evaluated together before checking for early exit.
    pub trial_batch: usize,
    /// Weight of squared translation error relative to squared rotation error
    /// in the pose averaging, in (rad / map unit)².
    pub translation_weight: f64,
    pub pose_graph_loss_scale: f64,
}

impl Default for RigInitConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            min_conditioning: 1e-3,
            min_rig_conditioning: 1e-2,
            early_exit_inlier_ratio: 0.9,
            trial_batch: 8,
            translation_weight: 1.0,
            pose_graph_loss_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpgradeConfig {
    pub ransac: RobustFitConfig,
    /// Division-model coefficients estimated by the linear solver.
    pub distortion_terms: usize,
    /// A camera whose inlier ratio falls below this has no valid solution.
    pub min_inlier_ratio: f64,
    /// Radii sampled when converting the division model to the target model.
    pub profile_samples: usize,
}

impl Default for UpgradeConfig {
    fn default() -> Self {
        Self {
            ransac: RobustFitConfig::default(),
            distortion_terms: 2,
            min_inlier_ratio: 0.25,
            profile_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub seed: u64,
    pub camera_model: CameraModel,
    pub radial_pose: RobustFitConfig,
    pub rig_init: RigInitConfig,
    /// Cauchy scale of the radial bundle adjustment, in pixels.
    pub radial_loss_scale: f64,
    pub upgrade: UpgradeConfig,
    /// Correspondences with a larger reprojection error before the final
    /// refinement are left out of it, in pixels.
    pub final_gate: f64,
    /// Cauchy scale of the final bundle adjustment, in pixels.
    pub final_loss_scale: f64,
    pub optimize_points: bool,
    pub lm: LmConfig,
    /// Runtime choice only; never affects results.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            camera_model: CameraModel::RadTan,
            radial_pose: RobustFitConfig::default(),
            rig_init: RigInitConfig::default(),
            radial_loss_scale: 1.0,
            upgrade: UpgradeConfig::default(),
            final_gate: 4.0,
            final_loss_scale: 1.0,
            optimize_points: false,
            lm: LmConfig::default(),
            execution: Execution::Parallel,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl CalibrationConfig {
    pub fn with_model(camera_model: CameraModel) -> Self {
        Self {
            camera_model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.radial_pose.with_seed(0).validate()?;
        self.upgrade.ransac.with_seed(0).validate()?;
        positive("radial loss scale", self.radial_loss_scale)?;
        positive("final gate", self.final_gate)?;
        positive("final loss scale", self.final_loss_scale)?;
        positive("minimum conditioning", self.rig_init.min_conditioning)?;
        positive("minimum rig conditioning", self.rig_init.min_rig_conditioning)?;
        positive("translation weight", self.rig_init.translation_weight)?;
        positive("pose graph loss scale", self.rig_init.pose_graph_loss_scale)?;
        positive("LM function tolerance", self.lm.function_tolerance)?;
        positive("LM parameter tolerance", self.lm.parameter_tolerance)?;
        positive("LM initial damping", self.lm.initial_damping)?;
        if self.rig_init.trials == 0 || self.rig_init.trial_batch == 0 {
            return Err(Error::Invalid("rig initialization needs at least one trial per batch".into()));
        }
        if self.radial_pose.min_inliers < 5 {
            return Err(Error::Invalid("radial pose estimation needs at least 5 inliers".into()));
        }
        if self.upgrade.distortion_terms > 2 {
            return Err(Error::Invalid("at most 2 division-model terms are supported".into()));
        }
        if self.upgrade.profile_samples < 3 {
            return Err(Error::Invalid("at least 3 profile samples are required".into()));
        }
        if !(0.0..=1.0).contains(&self.upgrade.min_inlier_ratio) {
            return Err(Error::Invalid("minimum upgrade inlier ratio must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Human-readable notes for each heuristic setting left at its default.
    pub fn default_warnings(&self) -> Vec<String> {
        let d = Self::default();
        let mut w = Vec::new();
        let mut note = |cond: bool, msg: String| {
            if cond {
                w.push(msg);
            }
        };
        note(
            self.rig_init.trials == d.rig_init.trials,
            format!("rig initialization trials at default ({})", d.rig_init.trials),
        );
        note(
            self.rig_init.min_conditioning == d.rig_init.min_conditioning,
            format!("principal-axis conditioning threshold at default ({:e})", d.rig_init.min_conditioning),
        );
        note(
            self.rig_init.min_rig_conditioning == d.rig_init.min_rig_conditioning,
            format!("rig-level axis conditioning threshold at default ({:e})", d.rig_init.min_rig_conditioning),
        );
        note(
            self.rig_init.early_exit_inlier_ratio == d.rig_init.early_exit_inlier_ratio,
            format!("early-exit inlier ratio at default ({})", d.rig_init.early_exit_inlier_ratio),
        );
        note(
            self.rig_init.translation_weight == d.rig_init.translation_weight,
            format!("pose averaging translation weight at default ({})", d.rig_init.translation_weight),
        );
        note(
            self.rig_init.pose_graph_loss_scale == d.rig_init.pose_graph_loss_scale,
            format!("pose averaging Cauchy scale at default ({})", d.rig_init.pose_graph_loss_scale),
        );
        note(
            self.upgrade.min_inlier_ratio == d.upgrade.min_inlier_ratio,
            format!("upgrade minimum inlier ratio at default ({})", d.upgrade.min_inlier_ratio),
        );
        note(
            self.final_gate == d.final_gate,
            format!("final refinement gate at default ({} px)", d.final_gate),
        );
        note(!self.optimize_points, "map points held fixed".to_string());
        w
    }
}
