use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::config::CalibrationConfig;
use super::data::{derive_seed, half_line_residual, SessionData};
use super::session::CalibrationSession;
use super::stage1::RegistrationSet;
use super::{FullRig, RadialRig};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraModel};
use crate::optim::residuals::upgrade_block;
use crate::optim::{refine_upgrade, UpgradeObservation};
use crate::par;
use crate::robust::{ransac, Estimator, RobustLoss};
use crate::solvers::{solve_upgrade_linear, UpgradeCorrespondence, UpgradeSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraUpgrade {
    pub intrinsics: CameraIntrinsics,
    pub t_z: f64,
    pub observations: usize,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraUpgradeReport {
    pub camera: usize,
    pub observations: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub focal: Option<f64>,
    pub t_z: Option<f64>,
    pub failure: Option<String>,
}

struct UpgradeEstimator {
    corrs: Vec<UpgradeCorrespondence>,
    n_dist: usize,
}

impl Estimator for UpgradeEstimator {
    type Model = UpgradeSolution;

    fn sample_size(&self) -> usize {
        2 + self.n_dist
    }

    fn num_data(&self) -> usize {
        self.corrs.len()
    }

    fn estimate(&self, sample: &[usize]) -> Vec<UpgradeSolution> {
        let c: Vec<_> = sample.iter().map(|&k| self.corrs[k]).collect();
        solve_upgrade_linear(&c, self.n_dist).unwrap_or_default()
    }

    fn residual(&self, model: &UpgradeSolution, k: usize) -> Option<f64> {
        model.reprojection_residual(&self.corrs[k]).map(|r| r.norm())
    }

    fn refit(&self, _model: &UpgradeSolution, inliers: &[usize]) -> Option<UpgradeSolution> {
        let c: Vec<_> = inliers.iter().map(|&k| self.corrs[k]).collect();
        solve_upgrade_linear(&c, self.n_dist).ok()?.into_iter().next()
    }
}

/// Least-squares fit of the target model's focal length and first two
/// radial coefficients to the radial profile of a division model, sampled
/// at `samples` radii up to `max_radius` pixels.
fn profile_to_model(
    solution: &UpgradeSolution,
    model: CameraModel,
    principal_point: Vector2<f64>,
    max_radius: f64,
    samples: usize,
) -> Result<CameraIntrinsics> {
    let mut a = DMatrix::zeros(samples, 3);
    let mut b = DVector::zeros(samples);
    for k in 0..samples {
        let r_d = max_radius * (k + 1) as f64 / samples as f64;
        let s = solution
            .division
            .undistort(r_d)
            .map_err(|_| Error::NoValidSolution("division model not invertible over the observed radii".into()))?
            / solution.focal;
        let psi = match model {
            CameraModel::RadTan => s,
            CameraModel::Equidistant => s.atan(),
        };
        a[(k, 0)] = psi;
        a[(k, 1)] = psi.powi(3);
        a[(k, 2)] = psi.powi(5);
        b[k] = r_d;
    }
    let scale: Vec<f64> = (0..3).map(|c| a.column(c).norm().max(1e-300)).collect();
    for (c, s) in scale.iter().enumerate() {
        a.column_mut(c).scale_mut(1.0 / s);
    }
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|_| Error::NumericalFailure("profile fit"))?;
    let coef: Vec<f64> = (0..3).map(|c| x[c] / scale[c]).collect();
    if !(coef[0] > 0.0) {
        return Err(Error::NoValidSolution("profile fit gave a non-positive focal length".into()));
    }
    Ok(CameraIntrinsics::new(
        model,
        coef[0],
        principal_point,
        [coef[1] / coef[0], coef[2] / coef[0], 0.0, 0.0],
    ))
}

/// Upgrade of one camera from observations whose camera-frame coordinates
/// are known up to the forward translation: robust linear division-model
/// estimate, conversion to the target model, then two rounds of nonlinear
/// refinement with re-classification in between.
pub fn upgrade_camera(
    observations: &[UpgradeObservation],
    principal_point: Vector2<f64>,
    config: &CalibrationConfig,
    seed: u64,
) -> Result<CameraUpgrade> {
    let uc = &config.upgrade;
    let est = UpgradeEstimator {
        corrs: observations
            .iter()
            .map(|o| UpgradeCorrespondence { v: o.pixel - principal_point, z: o.z })
            .collect(),
        n_dist: uc.distortion_terms,
    };
    if observations.len() < est.sample_size() {
        return Err(Error::NoValidSolution(format!("only {} observations", observations.len())));
    }
    let found = ransac(&est, &uc.ransac.with_seed(seed)).map_err(|e| Error::NoValidSolution(e.to_string()))?;
    let ratio = |count: usize| count as f64 / observations.len() as f64;
    if ratio(found.inlier_count()) < uc.min_inlier_ratio {
        return Err(Error::NoValidSolution(format!(
            "inlier ratio {:.3} below {}",
            ratio(found.inlier_count()),
            uc.min_inlier_ratio
        )));
    }
    let mut inliers = found.inlier_indices();
    let max_radius = inliers
        .iter()
        .map(|&k| est.corrs[k].v.norm())
        .fold(1.0, f64::max);
    let mut intrinsics =
        profile_to_model(&found.model, config.camera_model, principal_point, max_radius, uc.profile_samples)?;
    let mut t_z = found.model.t_z;
    let loss = RobustLoss::Cauchy {
        scale: config.final_loss_scale,
    };
    for _ in 0..2 {
        let obs: Vec<_> = inliers.iter().map(|&k| observations[k]).collect();
        // Monotonicity is only required where there is data; sparsely seen
        // image corners would otherwise reject well-fitting models.
        let observed = obs.iter().map(|o| (o.pixel - principal_point).norm()).fold(1.0, f64::max);
        let refined = refine_upgrade(&intrinsics, t_z, &obs, observed, &loss, &config.lm, crate::Execution::Sequential)?;
        intrinsics = refined.intrinsics;
        t_z = refined.t_z;
        inliers = (0..observations.len())
            .filter(|&k| {
                upgrade_block(&intrinsics, t_z, &observations[k].z, &observations[k].pixel)
                    .is_ok_and(|(r, _)| r.norm() <= uc.ransac.threshold)
            })
            .collect();
        if inliers.len() < uc.ransac.min_inliers.max(est.sample_size()) {
            return Err(Error::NoValidSolution(format!("{} inliers after refinement", inliers.len())));
        }
    }
    if ratio(inliers.len()) < uc.min_inlier_ratio {
        return Err(Error::NoValidSolution(format!("inlier ratio {:.3} after refinement", ratio(inliers.len()))));
    }
    Ok(CameraUpgrade {
        intrinsics,
        t_z,
        observations: observations.len(),
        inliers: inliers.len(),
    })
}

/// Per camera, every correspondence of a placed frameset that is radially
/// consistent with the refined radial rig, in the camera frame up to `t_z`.
fn gather(
    data: &SessionData,
    rig: &RadialRig,
    camera: usize,
    threshold: f64,
) -> Vec<UpgradeObservation> {
    let p = &rig.extrinsics[camera];
    let c = rig.principal_points[camera];
    let mut out = Vec::new();
    for (j, q) in rig.poses.iter().enumerate() {
        let Some(q) = q else { continue };
        let radial = p.compose_rigid(q);
        let full = p.with_forward_translation(0.0).compose(q);
        let img = &data.images[j][camera];
        for (px, &pt) in img.pixels.iter().zip(&img.points) {
            let x = &data.positions[pt];
            if half_line_residual(&radial.project(x), &(px - c)).is_some_and(|r| r <= threshold) {
                out.push(UpgradeObservation {
                    pixel: *px,
                    z: full.transform(x),
                });
            }
        }
    }
    out
}

/// Forward translation and intrinsics of every camera, independently.
/// Fails if any camera has no valid solution; the message lists them all.
pub fn stage4_upgrade_cameras(
    session: &CalibrationSession,
    _reg: &RegistrationSet,
    rig: &RadialRig,
    config: &CalibrationConfig,
) -> Result<(FullRig, Vec<CameraUpgradeReport>)> {
    let data = SessionData::new(session)?;
    let n = session.num_cameras();
    let results = par::map_range(config.execution, n, |i| {
        let obs = gather(&data, rig, i, config.radial_pose.threshold);
        let seed = derive_seed(config.seed, 4, i as u64, 0);
        (obs.len(), upgrade_camera(&obs, rig.principal_points[i], config, seed))
    });
    let mut reports = Vec::with_capacity(n);
    let mut failures = Vec::new();
    let mut upgrades = Vec::with_capacity(n);
    for (i, (count, r)) in results.into_iter().enumerate() {
        match r {
            Ok(u) => {
                reports.push(CameraUpgradeReport {
                    camera: i,
                    observations: count,
                    inliers: u.inliers,
                    inlier_ratio: u.inliers as f64 / count.max(1) as f64,
                    focal: Some(u.intrinsics.focal),
                    t_z: Some(u.t_z),
                    failure: None,
                });
                upgrades.push(Some(u));
            }
            Err(e) => {
                log::warn!("camera {i}: {e}");
                failures.push(format!("camera {i}: {e}"));
                reports.push(CameraUpgradeReport {
                    camera: i,
                    observations: count,
                    inliers: 0,
                    inlier_ratio: 0.0,
                    focal: None,
                    t_z: None,
                    failure: Some(e.to_string()),
                });
                upgrades.push(None);
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::NoValidSolution(failures.join("; ")));
    }
    let upgrades: Vec<CameraUpgrade> = upgrades.into_iter().map(Option::unwrap).collect();
    Ok((
        FullRig {
            intrinsics: upgrades.iter().map(|u| u.intrinsics).collect(),
            extrinsics: rig
                .extrinsics
                .iter()
                .zip(&upgrades)
                .map(|(p, u)| p.with_forward_translation(u.t_z))
                .collect(),
            poses: rig.poses.clone(),
            points: None,
        },
        reports,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RigidPose, Rotation};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    fn camera_data(cam: &CameraIntrinsics, t_z: f64, n: usize, seed: u64) -> Vec<UpgradeObservation> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let x = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0), rng.random_range(2.0..9.0));
            let Ok(px) = cam.project(&x) else { continue };
            if px.x < 0.0 || px.y < 0.0 || px.x > 640.0 || px.y > 480.0 {
                continue;
            }
            out.push(UpgradeObservation { pixel: px, z: x - Vector3::new(0.0, 0.0, t_z) });
        }
        out
    }

    #[test]
    fn noise_free_radtan_upgrade() {
        let cam = CameraIntrinsics::new(CameraModel::RadTan, 455.0, Vector2::new(322.0, 238.0), [-0.16, 0.025, 0.0, 0.0]);
        let obs = camera_data(&cam, 0.3, 600, 1);
        let config = CalibrationConfig::default();
        let up = upgrade_camera(&obs, cam.principal_point, &config, 7).unwrap();
        assert!((up.intrinsics.focal - 455.0).abs() / 455.0 < 1e-3, "{}", up.intrinsics.focal);
        assert!((up.t_z - 0.3).abs() < 1e-4, "{}", up.t_z);
        // Radial profile error over the image, in pixels.
        let mut sq = 0.0;
        for k in 1..=100 {
            let s = 0.9 * k as f64 / 100.0;
            let e = up.intrinsics.focal * up.intrinsics.radial_profile(s) - cam.focal * cam.radial_profile(s);
            sq += e * e;
        }
        assert!((sq / 100.0).sqrt() < 0.1);
    }

    #[test]
    fn zero_forward_translation_is_recovered() {
        let cam = CameraIntrinsics::new(CameraModel::Equidistant, 295.0, Vector2::new(320.0, 240.0), [0.03, -0.006, 0.001, -1e-4]);
        let obs = camera_data(&cam, 0.0, 600, 2);
        let up = upgrade_camera(&obs, cam.principal_point, &CalibrationConfig::with_model(CameraModel::Equidistant), 3).unwrap();
        assert!(up.t_z.abs() < 1e-6, "{}", up.t_z);
        assert!((up.intrinsics.focal - 295.0).abs() < 1e-3);
    }

    #[test]
    fn heavy_contamination_has_no_solution() {
        let cam = CameraIntrinsics::new(CameraModel::RadTan, 455.0, Vector2::new(320.0, 240.0), [-0.16, 0.025, 0.0, 0.0]);
        let mut obs = camera_data(&cam, 0.2, 1000, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        // Outliers stay on the right radial line but at random radii, as any
        // radially consistent contamination would.
        for o in obs.iter_mut().skip(50) {
            let v = o.pixel - cam.principal_point;
            o.pixel = cam.principal_point + v.normalize() * rng.random_range(1.0..400.0);
        }
        let r = upgrade_camera(&obs, cam.principal_point, &CalibrationConfig::default(), 5);
        assert!(matches!(r, Err(Error::NoValidSolution(_))), "{r:?}");
        let _ = RigidPose::new(Rotation::identity(), Vector3::zeros());
    }
}
