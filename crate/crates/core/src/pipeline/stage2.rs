use petgraph::unionfind::UnionFind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::CalibrationConfig;
use super::data::{derive_seed, half_line_residual, SessionData};
use super::session::CalibrationSession;
use super::stage1::RegistrationSet;
use super::RadialRig;
use crate::error::{Error, Result};
use crate::geometry::{RadialPose, RigidPose};
use crate::optim::{optimize_pose_graph, LmReport, PoseGraphInput, PoseMeasurement};
use crate::par;
use crate::robust::RobustLoss;
use crate::solvers::{axis_conditioning, solve_rig_pose_conditioned};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigInitDiagnostics {
    pub trials_run: usize,
    pub trials_closed: usize,
    /// Position of the frameset that seeded the selected trial.
    pub seed_frameset: usize,
    /// Robust radial cost of the selected trial before pose averaging.
    pub score: f64,
    /// Fraction of stage-1 inliers within the threshold for the selected trial.
    pub inlier_ratio: f64,
    pub framesets_placed: usize,
    /// Relative conditioning of the principal axes of the averaged rig.
    pub axis_conditioning: f64,
    pub pose_graph: LmReport,
}

/// Outcome of one greedy assignment trial.
struct Trial {
    seed_frameset: usize,
    cameras: Vec<Option<RadialPose>>,
    poses: Vec<Option<RigidPose>>,
    closed: bool,
    score: f64,
    inlier_ratio: f64,
}

/// Bipartite camera/frameset graph over the registered images must connect
/// every camera.
fn check_connected(reg: &RegistrationSet) -> Result<()> {
    let n = reg.num_cameras;
    let mut uf = UnionFind::<usize>::new(n + reg.num_framesets);
    let mut seen = vec![false; n];
    for e in &reg.entries {
        uf.union(e.camera, n + e.frameset);
        seen[e.camera] = true;
    }
    if seen.iter().any(|s| !s) || (1..n).any(|i| !uf.equiv(0, i)) {
        return Err(Error::UnconnectedRig);
    }
    Ok(())
}

/// Back-and-forth assignment from a seed frameset: rig poses of framesets
/// with at least two placed cameras, then missing cameras from the placed
/// frameset in which they have the most inliers (lowest index on ties).
fn greedy_assignment(
    reg: &RegistrationSet,
    seed: usize,
    min_conditioning: f64,
) -> (Vec<Option<RadialPose>>, Vec<Option<RigidPose>>) {
    let (n, m) = (reg.num_cameras, reg.num_framesets);
    let mut cameras: Vec<Option<RadialPose>> = vec![None; n];
    let mut poses: Vec<Option<RigidPose>> = vec![None; m];
    poses[seed] = Some(RigidPose::identity());
    for e in reg.cameras_in(seed) {
        cameras[e.camera] = Some(e.pose);
    }
    loop {
        let mut changed = false;
        for j in 0..m {
            if poses[j].is_some() {
                continue;
            }
            let pairs: Vec<_> = reg
                .cameras_in(j)
                .filter_map(|e| cameras[e.camera].map(|p| (p, e.pose)))
                .collect();
            if pairs.len() >= 2 {
                if let Ok(q) = solve_rig_pose_conditioned(&pairs, min_conditioning) {
                    poses[j] = Some(q);
                    changed = true;
                }
            }
        }
        for i in 0..n {
            if cameras[i].is_some() {
                continue;
            }
            let best = (0..m)
                .filter(|&j| poses[j].is_some())
                .filter_map(|j| reg.get(i, j).map(|e| (j, e)))
                .max_by(|a, b| a.1.inlier_count.cmp(&b.1.inlier_count).then(b.0.cmp(&a.0)));
            if let Some((j, e)) = best {
                cameras[i] = Some(e.pose.compose_rigid(&poses[j].unwrap().inverse()));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (cameras, poses)
}

/// Robust radial cost of an assignment over all stage-1 inliers, with images
/// that cannot be predicted charged the cost of a threshold-sized residual.
fn score_assignment(
    reg: &RegistrationSet,
    data: &SessionData,
    centers: &[nalgebra::Vector2<f64>],
    cameras: &[Option<RadialPose>],
    poses: &[Option<RigidPose>],
    threshold: f64,
) -> (f64, f64) {
    let loss = RobustLoss::Cauchy { scale: threshold };
    let miss = loss.cost(threshold * threshold);
    let (mut cost, mut good, mut total) = (0.0, 0usize, 0usize);
    for e in &reg.entries {
        total += e.inlier_count;
        let (Some(p), Some(q)) = (cameras[e.camera], poses[e.frameset]) else {
            cost += miss * e.inlier_count as f64;
            continue;
        };
        let pose = p.compose_rigid(&q);
        let img = &data.images[e.frameset][e.camera];
        for (k, _) in e.inliers.iter().enumerate().filter(|(_, b)| **b) {
            let v = img.pixels[k] - centers[e.camera];
            match half_line_residual(&pose.project(&data.positions[img.points[k]]), &v) {
                Some(r) => {
                    cost += loss.cost(r * r);
                    good += usize::from(r <= threshold);
                }
                None => cost += miss,
            }
        }
    }
    (cost, if total == 0 { 0.0 } else { good as f64 / total as f64 })
}

fn run_trial(
    reg: &RegistrationSet,
    data: &SessionData,
    centers: &[nalgebra::Vector2<f64>],
    candidates: &[usize],
    config: &CalibrationConfig,
    trial: usize,
) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, trial as u64, 0));
    let seed_frameset = candidates[rng.random_range(0..candidates.len())];
    let (cameras, poses) = greedy_assignment(reg, seed_frameset, config.rig_init.min_conditioning);
    let closed = cameras.iter().all(Option::is_some);
    let (score, inlier_ratio) = score_assignment(reg, data, centers, &cameras, &poses, config.radial_pose.threshold);
    Trial {
        seed_frameset,
        cameras,
        poses,
        closed,
        score,
        inlier_ratio,
    }
}

/// Re-expresses the rig so camera 0's radial extrinsic is `[I | 0]`.
fn normalize_radial(cameras: &mut [RadialPose], poses: &mut [Option<RigidPose>]) {
    let g = cameras[0].with_forward_translation(0.0);
    let g_inv = g.inverse();
    for c in cameras.iter_mut() {
        *c = c.compose_rigid(&g_inv);
    }
    cameras[0] = RadialPose::identity();
    for q in poses.iter_mut().flatten() {
        *q = g.compose(q);
    }
}

/// Polishes an assignment by robust pose averaging over every registered
/// image of a placed frameset and returns the normalized rig.
fn polish(
    reg: &RegistrationSet,
    session: &CalibrationSession,
    trial: Trial,
    trials_run: usize,
    trials_closed: usize,
    config: &CalibrationConfig,
) -> Result<(RadialRig, RigInitDiagnostics)> {
    let placed: Vec<usize> = (0..reg.num_framesets).filter(|&j| trial.poses[j].is_some()).collect();
    let mut pose_of = vec![None; reg.num_framesets];
    for (p, &j) in placed.iter().enumerate() {
        pose_of[j] = Some(p);
    }
    let measurements: Vec<PoseMeasurement> = reg
        .entries
        .iter()
        .filter_map(|e| {
            pose_of[e.frameset].map(|p| PoseMeasurement {
                camera: e.camera,
                pose: p,
                measured: e.pose,
                weight: 1.0,
            })
        })
        .collect();
    let input = PoseGraphInput {
        rig: trial.cameras.iter().map(|c| c.expect("closed trial")).collect(),
        poses: placed.iter().map(|&j| trial.poses[j].unwrap()).collect(),
        measurements: &measurements,
        translation_weight: config.rig_init.translation_weight,
        fixed_pose: pose_of[trial.seed_frameset].expect("seed is placed"),
    };
    let loss = RobustLoss::Cauchy {
        scale: config.rig_init.pose_graph_loss_scale,
    };
    let out = optimize_pose_graph(input, &loss, &config.lm, config.execution)?;
    let mut cameras = out.rig;
    let mut poses = vec![None; reg.num_framesets];
    for (p, &j) in placed.iter().enumerate() {
        poses[j] = Some(out.poses[p]);
    }
    normalize_radial(&mut cameras, &mut poses);
    // Noise lets single framesets of a parallel-axes rig pass the seed
    // check; the averaged rig does not.
    let conditioning = axis_conditioning(cameras.iter());
    if conditioning <= config.rig_init.min_rig_conditioning {
        return Err(Error::ParallelAxesDegenerate);
    }
    let diag = RigInitDiagnostics {
        trials_run,
        trials_closed,
        seed_frameset: trial.seed_frameset,
        score: trial.score,
        inlier_ratio: trial.inlier_ratio,
        framesets_placed: placed.len(),
        axis_conditioning: conditioning,
        pose_graph: out.report,
    };
    Ok((
        RadialRig {
            extrinsics: cameras,
            principal_points: session.image_centers(),
            poses,
        },
        diag,
    ))
}

/// Robust greedy rig averaging: randomized seeds, back-and-forth assignment
/// until closure, best trial by robust radial cost, then pose averaging.
pub fn stage2_initialize_rig(
    session: &CalibrationSession,
    reg: &RegistrationSet,
    config: &CalibrationConfig,
) -> Result<(RadialRig, RigInitDiagnostics)> {
    if reg.is_empty() {
        return Err(Error::EmptyRegistration);
    }
    check_connected(reg)?;
    let data = SessionData::new(session)?;
    let centers = session.image_centers();
    let multi: Vec<usize> = (0..reg.num_framesets)
        .filter(|&j| reg.cameras_in(j).count() >= 2)
        .collect();
    let candidates: Vec<usize> = multi
        .iter()
        .copied()
        .filter(|&j| axis_conditioning(reg.cameras_in(j).map(|e| &e.pose)) > config.rig_init.min_conditioning)
        .collect();
    if candidates.is_empty() {
        return Err(if multi.is_empty() {
            Error::AllTrialsFailed
        } else {
            Error::ParallelAxesDegenerate
        });
    }

    let rc = &config.rig_init;
    let mut best: Option<(usize, Trial)> = None;
    let (mut run, mut closed) = (0, 0);
    while run < rc.trials {
        let batch = rc.trial_batch.min(rc.trials - run);
        let trials = par::map_range(config.execution, batch, |b| {
            run_trial(reg, &data, &centers, &candidates, config, run + b)
        });
        for (b, t) in trials.into_iter().enumerate() {
            if !t.closed {
                continue;
            }
            closed += 1;
            if best.as_ref().is_none_or(|(_, bt)| t.score < bt.score) {
                best = Some((run + b, t));
            }
        }
        run += batch;
        if best.as_ref().is_some_and(|(_, t)| t.inlier_ratio > rc.early_exit_inlier_ratio) {
            break;
        }
    }
    let Some((_, trial)) = best else {
        return Err(Error::AllTrialsFailed);
    };
    polish(reg, session, trial, run, closed, config)
}

/// Baseline initialization assuming one frameset in which every camera was
/// registered: that frameset fixes all extrinsics, the remaining rig poses
/// follow, and the result is polished like the greedy initialization.
pub fn initialize_rig_single_frameset(
    session: &CalibrationSession,
    reg: &RegistrationSet,
    config: &CalibrationConfig,
) -> Result<(RadialRig, RigInitDiagnostics)> {
    let data = SessionData::new(session)?;
    let centers = session.image_centers();
    let complete = (0..reg.num_framesets)
        .filter(|&j| reg.cameras_in(j).count() == reg.num_cameras)
        .max_by(|&a, &b| {
            let count = |j: usize| reg.cameras_in(j).map(|e| e.inlier_count).sum::<usize>();
            count(a).cmp(&count(b)).then(b.cmp(&a))
        })
        .ok_or_else(|| Error::NoValidSolution("no frameset registers every camera".into()))?;
    if axis_conditioning(reg.cameras_in(complete).map(|e| &e.pose)) <= config.rig_init.min_conditioning {
        return Err(Error::ParallelAxesDegenerate);
    }
    let (cameras, poses) = greedy_assignment(reg, complete, config.rig_init.min_conditioning);
    let (score, inlier_ratio) = score_assignment(reg, &data, &centers, &cameras, &poses, config.radial_pose.threshold);
    let trial = Trial {
        seed_frameset: complete,
        cameras,
        poses,
        closed: true,
        score,
        inlier_ratio,
    };
    polish(reg, session, trial, 1, 1, config)
}
