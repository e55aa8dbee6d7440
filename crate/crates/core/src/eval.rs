//! Accuracy metrics: rig comparison after robust alignment, the good/poor
//! classification used for robustness studies, and hold-out reprojection.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{radial_from_full, CameraIntrinsics, RigidPose};
use crate::optim::residuals::reprojection_block;
use crate::optim::{dmat, lm_minimize, BlockLayout, LeastSquaresProblem, ResidualEval};
use crate::par;
use crate::pipeline::{
    derive_seed, register_image, CalibrationConfig, CalibrationResult, CalibrationSession, SessionData,
};
use crate::robust::RobustLoss;
use crate::solvers::{align_rigid, align_rigid_weighted, solve_rig_pose_conditioned};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigErrorReport {
    /// Geodesic rotation error per camera, degrees.
    pub rotation_errors_deg: Vec<f64>,
    /// Camera center error per camera after alignment, centimetres.
    pub center_errors_cm: Vec<f64>,
    pub mean_rotation_deg: f64,
    pub max_rotation_deg: f64,
    pub mean_center_cm: f64,
    pub max_center_cm: f64,
    /// Per-camera weights of the final alignment pass.
    pub alignment_weights: Vec<f64>,
    /// Hold-out reprojection RMS in pixels, when validated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_rms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Indoor,
    Outdoor,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "indoor" => Some(Regime::Indoor),
            "outdoor" => Some(Regime::Outdoor),
            _ => None,
        }
    }

    /// Center error bound in centimetres.
    pub fn center_threshold_cm(self) -> f64 {
        match self {
            Regime::Indoor => 1.0,
            Regime::Outdoor => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Good,
    Poor,
}

pub const ROTATION_THRESHOLD_DEG: f64 = 1.0;

/// Good iff every camera is within 1° and within the regime's center bound.
pub fn classify_calibration(report: &RigErrorReport, regime: Regime) -> Quality {
    if report.max_rotation_deg < ROTATION_THRESHOLD_DEG && report.max_center_cm < regime.center_threshold_cm() {
        Quality::Good
    } else {
        Quality::Poor
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Compares rig extrinsics (rig-to-camera) after aligning the estimated
/// camera centers onto the reference ones. The alignment is refined once
/// with the worst camera down-weighted by `1 / (1 + (r_worst / r_median)²)`.
/// `map_scale` is metres per map unit.
pub fn compare_rigs(estimated: &[RigidPose], reference: &[RigidPose], map_scale: f64) -> Result<RigErrorReport> {
    if estimated.len() != reference.len() {
        return Err(Error::CameraCountMismatch(estimated.len(), reference.len()));
    }
    let src: Vec<Vector3<f64>> = estimated.iter().map(|p| p.center()).collect();
    let dst: Vec<Vector3<f64>> = reference.iter().map(|p| p.center()).collect();
    let residuals = |t: &RigidPose| -> Vec<f64> { src.iter().zip(&dst).map(|(s, d)| (t.transform(s) - d).norm()).collect() };

    let mut align = align_rigid(&src, &dst)?;
    let mut weights = vec![1.0; src.len()];
    let r = residuals(&align);
    let worst = (0..r.len()).max_by(|a, b| r[*a].total_cmp(&r[*b]).then(b.cmp(a))).unwrap();
    if r[worst] > 0.0 {
        let mut sorted = r.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let ratio = r[worst] / median.max(f64::MIN_POSITIVE);
        weights[worst] = 1.0 / (1.0 + ratio * ratio);
        align = align_rigid_weighted(&src, &dst, &weights)?;
    }

    let align_inv_rot = align.rotation.inverse();
    let rotation_errors_deg: Vec<f64> = estimated
        .iter()
        .zip(reference)
        .map(|(e, r)| e.rotation.compose(&align_inv_rot).angle_to(&r.rotation).to_degrees())
        .collect();
    let center_errors_cm: Vec<f64> = residuals(&align).iter().map(|d| d * map_scale * 100.0).collect();
    Ok(RigErrorReport {
        mean_rotation_deg: mean(&rotation_errors_deg),
        max_rotation_deg: max(&rotation_errors_deg),
        mean_center_cm: mean(&center_errors_cm),
        max_center_cm: max(&center_errors_cm),
        rotation_errors_deg,
        center_errors_cm,
        alignment_weights: weights,
        holdout_rms: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutValidation {
    /// Per-coordinate RMS over inlier correspondences, pixels.
    pub rms: f64,
    pub framesets: usize,
    pub framesets_registered: usize,
    pub observations: usize,
    pub inliers: usize,
}

/// Below this inlier fraction the hold-out is treated as not belonging to the rig.
pub const HOLDOUT_MIN_INLIER_FRACTION: f64 = 0.5;

/// Pose of one frameset with the rig frozen.
struct FramesetFit<'a> {
    rig: &'a FrozenRig<'a>,
    cams: Vec<usize>,
    points: Vec<Vector3<f64>>,
    pixels: Vec<nalgebra::Vector2<f64>>,
}

impl LeastSquaresProblem for FramesetFit<'_> {
    type State = RigidPose;

    fn layout(&self) -> BlockLayout {
        BlockLayout {
            global: vec![6],
            local: vec![],
        }
    }

    fn num_residuals(&self) -> usize {
        self.cams.len()
    }

    fn evaluate(&self, q: &RigidPose, k: usize, jac: bool) -> Option<ResidualEval> {
        let i = self.cams[k];
        let b = reprojection_block(
            &self.rig.extrinsics[i],
            q,
            &self.rig.intrinsics[i],
            &self.points[k],
            &self.pixels[k],
        )
        .ok()?;
        Some(ResidualEval {
            residual: DVector::from_column_slice(b.residual.as_slice()),
            global: if jac { vec![(0, dmat(&b.d_pose))] } else { vec![] },
            local: None,
        })
    }

    fn retract(&self, q: &RigidPose, g: &[DVector<f64>], _l: &[DVector<f64>]) -> RigidPose {
        q.retract(g[0].as_slice())
    }
}

/// Squared error sum, inlier count and observation count of one frameset,
/// or `None` if its pose could not be recovered.
fn validate_frameset(rig: &FrozenRig, data: &SessionData, j: usize) -> Option<(f64, usize, usize)> {
    let config = rig.config;
    let mut pairs = Vec::new();
    for (i, img) in data.images[j].iter().enumerate() {
        if img.len() < 5 {
            continue;
        }
        let pp = rig.intrinsics[i].principal_point;
        let reg = register_image(
            img.pixels.iter().map(|p| p - pp).collect(),
            img.points.iter().map(|&p| data.positions[p]).collect(),
            config,
            derive_seed(config.seed, 6, j as u64, i as u64),
        );
        if let Some((pose, _, _)) = reg {
            pairs.push((radial_from_full(&rig.extrinsics[i]), pose));
        }
    }
    if pairs.len() < 2 {
        return None;
    }
    let q0 = solve_rig_pose_conditioned(&pairs, config.rig_init.min_conditioning).ok()?;
    let mut fit = FramesetFit {
        rig,
        cams: Vec::new(),
        points: Vec::new(),
        pixels: Vec::new(),
    };
    for (i, img) in data.images[j].iter().enumerate() {
        for (px, &pt) in img.pixels.iter().zip(&img.points) {
            fit.cams.push(i);
            fit.points.push(data.positions[pt]);
            fit.pixels.push(*px);
        }
    }
    let loss = RobustLoss::Cauchy {
        scale: config.final_loss_scale,
    };
    let (q, _) = lm_minimize(&fit, q0, &loss, &config.lm, crate::Execution::Sequential).ok()?;
    let gate2 = config.final_gate * config.final_gate;
    let (mut sq, mut inliers) = (0.0, 0);
    for k in 0..fit.cams.len() {
        if let Some(e) = fit.evaluate(&q, k, false) {
            let e2 = e.residual.norm_squared();
            if e2 <= gate2 {
                sq += e2;
                inliers += 1;
            }
        }
    }
    Some((sq, inliers, fit.cams.len()))
}

struct FrozenRig<'a> {
    intrinsics: &'a [CameraIntrinsics],
    extrinsics: &'a [RigidPose],
    config: &'a CalibrationConfig,
}

/// Re-estimates only the frameset poses of `holdout` with the calibration
/// frozen and reports the inlier reprojection RMS. A hold-out in which fewer
/// than half the correspondences fit is reported as a mismatch rather than
/// as a small RMS over the few that do.
pub fn validate_reprojection(result: &CalibrationResult, holdout: &CalibrationSession) -> Result<HoldoutValidation> {
    validate_rig_reprojection(&result.intrinsics, &result.extrinsics, &result.config, holdout)
}

/// [`validate_reprojection`] for a rig given by its parameters; `config`
/// supplies the robust-fitting settings and seed.
pub fn validate_rig_reprojection(
    intrinsics: &[CameraIntrinsics],
    extrinsics: &[RigidPose],
    config: &CalibrationConfig,
    holdout: &CalibrationSession,
) -> Result<HoldoutValidation> {
    if intrinsics.len() != extrinsics.len() {
        return Err(Error::Precondition("intrinsics and extrinsics differ in length".into()));
    }
    if holdout.num_cameras() != extrinsics.len() {
        return Err(Error::CameraCountMismatch(extrinsics.len(), holdout.num_cameras()));
    }
    holdout.validate()?;
    let data = SessionData::new(holdout)?;
    let rig = FrozenRig {
        intrinsics,
        extrinsics,
        config,
    };
    let m = holdout.framesets.len();
    let per = par::map_range(config.execution, m, |j| validate_frameset(&rig, &data, j));
    let (mut sq, mut inliers, mut observations, mut registered) = (0.0, 0, 0, 0);
    for (s, n_in, n_obs) in per.into_iter().flatten() {
        sq += s;
        inliers += n_in;
        observations += n_obs;
        registered += 1;
    }
    if registered == 0 || inliers == 0 {
        return Err(Error::EmptyRegistration);
    }
    let fraction = inliers as f64 / observations as f64;
    if fraction < HOLDOUT_MIN_INLIER_FRACTION {
        return Err(Error::HoldoutMismatch {
            inlier_fraction: fraction,
        });
    }
    Ok(HoldoutValidation {
        rms: (sq / (2 * inliers) as f64).sqrt(),
        framesets: m,
        framesets_registered: registered,
        observations,
        inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_rig(seed: u64, n: usize) -> Vec<RigidPose> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let w = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                RigidPose::new(Rotation::exp(&w), t)
            })
            .collect()
    }

    fn report(rot: f64, center: f64) -> RigErrorReport {
        RigErrorReport {
            rotation_errors_deg: vec![rot],
            center_errors_cm: vec![center],
            mean_rotation_deg: rot,
            max_rotation_deg: rot,
            mean_center_cm: center,
            max_center_cm: center,
            alignment_weights: vec![1.0],
            holdout_rms: None,
        }
    }

    #[test]
    fn identical_rigs_have_zero_error() {
        let rig = random_rig(1, 6);
        let r = compare_rigs(&rig, &rig, 1.0).unwrap();
        assert!(r.max_rotation_deg < 1e-9 && r.max_center_cm < 1e-9);
    }

    #[test]
    fn global_motion_is_removed() {
        let rig = random_rig(2, 6);
        let g = RigidPose::new(Rotation::exp(&Vector3::new(0.4, -1.1, 2.0)), Vector3::new(3.0, -2.0, 0.5));
        let moved: Vec<_> = rig.iter().map(|p| p.compose(&g)).collect();
        let r = compare_rigs(&moved, &rig, 1.0).unwrap();
        assert!(r.max_rotation_deg < 1e-9, "{}", r.max_rotation_deg);
        assert!(r.max_center_cm < 1e-9, "{}", r.max_center_cm);
    }

    #[test]
    fn one_degree_perturbation_is_reported() {
        let rig = random_rig(3, 5);
        let mut est = rig.clone();
        // Rotate camera 2 about its own center so the centers are unchanged.
        let c = est[2].center();
        let rot = Rotation::exp(&(Vector3::new(1.0, 2.0, -0.5).normalize() * 1f64.to_radians())).compose(&est[2].rotation);
        est[2] = RigidPose::new(rot, -rot.rotate(&c));
        let r = compare_rigs(&est, &rig, 1.0).unwrap();
        assert!((r.rotation_errors_deg[2] - 1.0).abs() < 1e-6, "{}", r.rotation_errors_deg[2]);
        for (i, e) in r.rotation_errors_deg.iter().enumerate() {
            if i != 2 {
                assert!(*e < 1e-6);
            }
        }
    }

    #[test]
    fn camera_count_mismatch() {
        assert!(matches!(
            compare_rigs(&random_rig(4, 3), &random_rig(4, 4), 1.0),
            Err(Error::CameraCountMismatch(3, 4))
        ));
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify_calibration(&report(0.5, 0.8), Regime::Indoor), Quality::Good);
        assert_eq!(classify_calibration(&report(0.5, 1.5), Regime::Indoor), Quality::Poor);
        assert_eq!(classify_calibration(&report(0.5, 1.5), Regime::Outdoor), Quality::Good);
        assert_eq!(classify_calibration(&report(1.2, 0.1), Regime::Outdoor), Quality::Poor);
    }

    proptest! {
        #[test]
        fn rotation_error_is_symmetric(seed in 0u64..1000, noise in 0.0f64..0.2) {
            let a = random_rig(seed, 5);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 7);
            let b: Vec<_> = a
                .iter()
                .map(|p| {
                    let w = Vector3::new(rng.random_range(-noise..=noise), rng.random_range(-noise..=noise), rng.random_range(-noise..=noise));
                    let t = Vector3::new(rng.random_range(-noise..=noise), rng.random_range(-noise..=noise), rng.random_range(-noise..=noise));
                    RigidPose::new(Rotation::exp(&w).compose(&p.rotation), p.translation + t)
                })
                .collect();
            let ab = compare_rigs(&a, &b, 1.0).unwrap();
            let ba = compare_rigs(&b, &a, 1.0).unwrap();
            for (x, y) in ab.rotation_errors_deg.iter().zip(&ba.rotation_errors_deg) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }

        #[test]
        fn classification_is_monotone(rot in 0.0f64..3.0, center in 0.0f64..4.0, dr in 0.0f64..1.0, dc in 0.0f64..1.0, outdoor: bool) {
            let regime = if outdoor { Regime::Outdoor } else { Regime::Indoor };
            let before = classify_calibration(&report(rot, center), regime);
            let after = classify_calibration(&report(rot * dr, center * dc), regime);
            prop_assert!(!(before == Quality::Good && after == Quality::Poor));
        }
    }
}
