use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::config::CalibrationConfig;
use super::data::{derive_seed, half_line_residual, SessionData};
use super::session::CalibrationSession;
use crate::error::{Error, Result};
use crate::geometry::{RadialPose, RigidPose};
use crate::optim::residuals::radial_block;
use crate::optim::{lm_minimize, BlockLayout, LeastSquaresProblem, LmConfig, ResidualEval};
use crate::par::{self, Execution};
use crate::robust::{ransac, Estimator, RobustLoss};
use crate::solvers::{solve_p5p_radial, CenteredCorrespondence};

/// Radial pose `T̂_ij` of camera `camera` in the frameset at position
/// `frameset`, with the inlier mask over that image's correspondences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub camera: usize,
    pub frameset: usize,
    pub pose: RadialPose,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

/// The images whose radial pose could be estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSet {
    pub num_cameras: usize,
    pub num_framesets: usize,
    pub entries: Vec<Registration>,
    /// Images with at least five correspondences.
    pub attempted: usize,
    /// Non-empty images with fewer than five correspondences.
    pub skipped: usize,
    by_image: Vec<Option<usize>>,
}

impl RegistrationSet {
    pub fn new(num_cameras: usize, num_framesets: usize, entries: Vec<Registration>) -> Self {
        let mut by_image = vec![None; num_cameras * num_framesets];
        for (k, e) in entries.iter().enumerate() {
            by_image[e.frameset * num_cameras + e.camera] = Some(k);
        }
        Self {
            num_cameras,
            num_framesets,
            entries,
            attempted: 0,
            skipped: 0,
            by_image,
        }
    }

    pub fn get(&self, camera: usize, frameset: usize) -> Option<&Registration> {
        self.by_image[frameset * self.num_cameras + camera].map(|k| &self.entries[k])
    }

    /// Registered cameras of a frameset, in camera order.
    pub fn cameras_in(&self, frameset: usize) -> impl Iterator<Item = &Registration> + '_ {
        (0..self.num_cameras).filter_map(move |i| self.get(i, frameset))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct RadialPoseEstimator<'a> {
    v: Vec<Vector2<f64>>,
    x: Vec<Vector3<f64>>,
    lm: &'a LmConfig,
}

impl Estimator for RadialPoseEstimator<'_> {
    type Model = RadialPose;

    fn sample_size(&self) -> usize {
        5
    }

    fn num_data(&self) -> usize {
        self.v.len()
    }

    fn estimate(&self, sample: &[usize]) -> Vec<RadialPose> {
        let corrs: Vec<_> = sample
            .iter()
            .map(|&k| CenteredCorrespondence { v: self.v[k], point: self.x[k] })
            .collect();
        // Both orientations: a contaminated sample may vote for the wrong one.
        solve_p5p_radial(&corrs)
            .map(|poses| poses.into_iter().flat_map(|p| [p, p.flipped()]).collect())
            .unwrap_or_default()
    }

    fn residual(&self, model: &RadialPose, k: usize) -> Option<f64> {
        half_line_residual(&model.project(&self.x[k]), &self.v[k])
    }

    fn refit(&self, model: &RadialPose, inliers: &[usize]) -> Option<RadialPose> {
        if inliers.len() < 6 {
            return None;
        }
        let problem = PoseFit { est: self, idx: inliers };
        let (pose, _) = lm_minimize(&problem, *model, &RobustLoss::Trivial, self.lm, Execution::Sequential).ok()?;
        Some(pose)
    }
}

/// Radial pose refinement of one image over an inlier set.
struct PoseFit<'a, 'b> {
    est: &'a RadialPoseEstimator<'b>,
    idx: &'a [usize],
}

impl LeastSquaresProblem for PoseFit<'_, '_> {
    type State = RadialPose;

    fn layout(&self) -> BlockLayout {
        BlockLayout { global: vec![5], local: vec![] }
    }

    fn num_residuals(&self) -> usize {
        self.idx.len()
    }

    fn evaluate(&self, pose: &RadialPose, k: usize, jac: bool) -> Option<ResidualEval> {
        let d = self.idx[k];
        let b = radial_block(pose, &RigidPose::identity(), &Vector2::zeros(), &self.est.x[d], &self.est.v[d]).ok()?;
        Some(ResidualEval {
            residual: DVector::from_column_slice(b.residual.as_slice()),
            global: if jac { vec![(0, crate::optim::dmat(&b.d_rig))] } else { vec![] },
            local: None,
        })
    }

    fn retract(&self, pose: &RadialPose, g: &[DVector<f64>], _l: &[DVector<f64>]) -> RadialPose {
        pose.retract(g[0].as_slice())
    }
}

/// Robust radial pose of one image from centered pixels `v` and map points
/// `x`, with its inlier mask.
pub(crate) fn register_image(
    v: Vec<Vector2<f64>>,
    x: Vec<Vector3<f64>>,
    config: &CalibrationConfig,
    seed: u64,
) -> Option<(RadialPose, Vec<bool>, usize)> {
    let refit_lm = LmConfig {
        max_iterations: 20,
        ..config.lm
    };
    let est = RadialPoseEstimator { v, x, lm: &refit_lm };
    let r = ransac(&est, &config.radial_pose.with_seed(seed)).ok()?;
    let count = r.inlier_count();
    Some((r.model, r.inlier_mask, count))
}

/// Robust 1D radial pose of every image with at least five correspondences,
/// with pixels centered at the image center. Images failing the inlier
/// requirement are left out.
pub fn stage1_estimate_radial_poses(session: &CalibrationSession, config: &CalibrationConfig) -> Result<RegistrationSet> {
    let data = SessionData::new(session)?;
    let n = session.num_cameras();
    let m = session.framesets.len();
    let centers = session.image_centers();
    let outcomes = par::map_range(config.execution, n * m, |k| {
        let (j, i) = (k / n, k % n);
        let img = &data.images[j][i];
        if img.len() < 5 {
            return (None, !img.pixels.is_empty());
        }
        let reg = register_image(
            img.pixels.iter().map(|p| p - centers[i]).collect(),
            img.points.iter().map(|&p| data.positions[p]).collect(),
            config,
            derive_seed(config.seed, 1, j as u64, i as u64),
        )
        .map(|(pose, inliers, inlier_count)| Registration {
            camera: i,
            frameset: j,
            pose,
            inliers,
            inlier_count,
        });
        (Some(reg), false)
    });
    let mut entries = Vec::new();
    let (mut attempted, mut skipped) = (0, 0);
    for (reg, skip) in outcomes {
        match reg {
            Some(r) => {
                attempted += 1;
                entries.extend(r);
            }
            None => skipped += usize::from(skip),
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyRegistration);
    }
    let mut set = RegistrationSet::new(n, m, entries);
    set.attempted = attempted;
    set.skipped = skipped;
    Ok(set)
}
