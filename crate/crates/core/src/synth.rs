//! Synthetic rigs, trajectories, maps and observations with known ground truth.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{max_corner_radius, CameraIntrinsics, CameraModel, RigidPose, Rotation};
use crate::par::{self, Execution};
use crate::pipeline::{CalibrationSession, Frameset, MapPoint, Observation2D};
use crate::solvers::axis_conditioning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Pentagonal10,
    Helmet5,
    Custom,
}

/// Ground-truth rig: per-camera extrinsics (rig frame to camera frame),
/// intrinsics and image sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigPreset {
    pub kind: PresetKind,
    pub extrinsics: Vec<RigidPose>,
    pub intrinsics: Vec<CameraIntrinsics>,
    pub image_sizes: Vec<[u32; 2]>,
}

/// Camera looking along `forward` (rig frame) from `center`, with image y
/// pointing along `down` projected orthogonal to `forward`.
pub fn camera_looking(center: Vector3<f64>, forward: Vector3<f64>, down: Vector3<f64>) -> RigidPose {
    let z = forward.normalize();
    let y = (down - z * z.dot(&down)).normalize();
    let x = y.cross(&z);
    let cam_to_rig = Matrix3::from_columns(&[x, y, z]);
    let rotation = Rotation::from_matrix(&cam_to_rig.transpose());
    RigidPose::new(rotation, -rotation.rotate(&center))
}

fn horizontal(yaw: f64, pitch: f64) -> Vector3<f64> {
    Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin())
}

const DOWN: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

impl RigPreset {
    /// Ten cameras in five outward-looking stereo pairs at 72° spacing, about
    /// 70° horizontal field of view, rig diameter about 0.4 m.
    pub fn pentagonal10() -> Self {
        let size = [640, 480];
        let mut extrinsics = Vec::new();
        let mut intrinsics = Vec::new();
        let tilts = [0.02, -0.015, 0.01, -0.025, 0.03];
        for k in 0..5 {
            let yaw = 2.0 * PI * k as f64 / 5.0;
            let forward = horizontal(yaw, tilts[k]);
            let side = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
            let pair_center = horizontal(yaw, 0.0) * 0.19;
            for (s, sign) in [(0usize, -1.0), (1, 1.0)] {
                let center = pair_center + side * (0.06 * sign) + Vector3::new(0.0, 0.0, 0.01 * s as f64);
                extrinsics.push(camera_looking(center, forward, DOWN));
                let c = 2 * k + s;
                let pp = Vector2::new(320.0 + 1.5 * (c as f64 - 4.5), 240.0 - 1.2 * ((c % 4) as f64 - 1.5));
                intrinsics.push(CameraIntrinsics::new(
                    CameraModel::RadTan,
                    455.0 + 2.0 * (c as f64 - 4.5),
                    pp,
                    [-0.16 + 0.004 * (c % 3) as f64, 0.025, 4e-4 * (1.0 - (c % 2) as f64 * 2.0), -2e-4],
                ));
            }
        }
        Self {
            kind: PresetKind::Pentagonal10,
            extrinsics,
            intrinsics,
            image_sizes: vec![size; 10],
        }
    }

    /// Five wide-angle cameras around a helmet covering 360°, modelled with
    /// the equidistant projection at about 120° horizontal field of view.
    pub fn helmet5() -> Self {
        let size = [640, 480];
        let mut extrinsics = Vec::new();
        let mut intrinsics = Vec::new();
        let tilts = [0.05, 0.02, -0.03, 0.04, -0.01];
        for k in 0..5 {
            let yaw = 2.0 * PI * k as f64 / 5.0 + 0.1;
            let center = horizontal(yaw, 0.0) * 0.11 + Vector3::new(0.0, 0.0, 0.02 * (k % 2) as f64);
            extrinsics.push(camera_looking(center, horizontal(yaw, tilts[k]), DOWN));
            intrinsics.push(CameraIntrinsics::new(
                CameraModel::Equidistant,
                295.0 + 1.5 * k as f64,
                Vector2::new(320.0 - 2.0 + k as f64, 240.0 + 1.0 - 0.5 * k as f64),
                [0.03 - 0.004 * k as f64, -0.006, 0.001, -1e-4],
            ));
        }
        Self {
            kind: PresetKind::Helmet5,
            extrinsics,
            intrinsics,
            image_sizes: vec![size; 5],
        }
    }

    pub fn custom(extrinsics: Vec<RigidPose>, intrinsics: Vec<CameraIntrinsics>, image_sizes: Vec<[u32; 2]>) -> Self {
        Self {
            kind: PresetKind::Custom,
            extrinsics,
            intrinsics,
            image_sizes,
        }
    }

    pub fn num_cameras(&self) -> usize {
        self.extrinsics.len()
    }

    /// Largest distance between two camera centers.
    pub fn diameter(&self) -> f64 {
        let c: Vec<_> = self.extrinsics.iter().map(RigidPose::center).collect();
        let mut d: f64 = 0.0;
        for a in &c {
            for b in &c {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// Relative conditioning of the stacked principal-axis constraints.
    pub fn axis_conditioning(&self) -> f64 {
        let radial: Vec<_> = self.extrinsics.iter().map(crate::geometry::radial_from_full).collect();
        axis_conditioning(radial.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPattern {
    /// Every image is removed independently.
    #[default]
    Random,
    /// At least one camera is removed from every frameset while at least two
    /// remain, so no frameset covers the whole rig.
    NoCompleteFrameset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the Gaussian pixel noise per coordinate.
    pub pixel_sigma: f64,
    /// Fraction of correspondences replaced by uniform in-image pixels.
    pub outlier_ratio: f64,
    /// Fraction of (camera, frameset) images removed.
    pub dropout_ratio: f64,
    pub dropout_pattern: DropoutPattern,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.5,
            outlier_ratio: 0.1,
            dropout_ratio: 0.0,
            dropout_pattern: DropoutPattern::Random,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn noise_free(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.0,
            outlier_ratio: 0.0,
            dropout_ratio: 0.0,
            dropout_pattern: DropoutPattern::Random,
            seed,
        }
    }
}

/// Scene and trajectory layout. Distances are in map units (1 unit = 1 m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub framesets: usize,
    pub points: usize,
    pub max_observations_per_image: usize,
    /// Radius of the circular trajectory.
    pub trajectory_radius: f64,
    /// Number of framesets per full loop.
    pub loop_length: usize,
    /// Map points lie in a cylindrical shell between these radii.
    pub shell_radii: [f64; 2],
    pub shell_heights: [f64; 2],
    /// Time between consecutive framesets in seconds.
    pub frame_interval: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            framesets: 200,
            points: 4000,
            max_observations_per_image: 120,
            trajectory_radius: 1.5,
            loop_length: 200,
            shell_radii: [3.0, 6.0],
            shell_heights: [-1.5, 2.5],
            frame_interval: 0.1,
        }
    }
}

impl SceneSpec {
    pub fn with_framesets(framesets: usize) -> Self {
        Self {
            framesets,
            loop_length: framesets.max(1),
            ..Self::default()
        }
    }
}

/// Everything the generator knows: the true rig, the rig pose of every
/// frameset, and which generated correspondences are genuine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub extrinsics: Vec<RigidPose>,
    pub intrinsics: Vec<CameraIntrinsics>,
    /// World-to-rig pose of every frameset, dropped images included.
    pub rig_poses: Vec<RigidPose>,
    /// `inliers[j][i][k]` is false for replaced (outlier) correspondences.
    pub inliers: Vec<Vec<Vec<bool>>>,
    /// `dropped[j][i]` marks removed images.
    pub dropped: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn outlier_fraction(&self) -> f64 {
        let (mut out, mut total) = (0usize, 0usize);
        for m in self.inliers.iter().flatten().flatten() {
            total += 1;
            out += usize::from(!m);
        }
        if total == 0 {
            0.0
        } else {
            out as f64 / total as f64
        }
    }
}

/// World-to-rig pose at trajectory parameter `phase` (radians around the loop).
fn trajectory_pose(radius: f64, phase: f64) -> RigidPose {
    let position = Vector3::new(radius * phase.cos(), radius * phase.sin(), 0.15 * (3.0 * phase).sin());
    let heading = phase + PI / 2.0 + 0.15 * (5.0 * phase).sin();
    let pitch = 0.05 * (4.0 * phase).sin();
    let roll = 0.03 * (7.0 * phase).cos();
    let rig_to_world = Rotation::exp(&Vector3::new(0.0, 0.0, heading))
        .compose(&Rotation::exp(&Vector3::new(0.0, pitch, 0.0)))
        .compose(&Rotation::exp(&Vector3::new(roll, 0.0, 0.0)));
    let rotation = rig_to_world.inverse();
    RigidPose::new(rotation, -rotation.rotate(&position))
}

/// Whether `x_cam` is in front of the camera, inside its field-of-view cone
/// and projects inside the image (2 px margin).
fn visible(cam: &CameraIntrinsics, size: [u32; 2], max_angle: f64, x_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
    if x_cam.z <= 0.1 || x_cam.norm() > 20.0 {
        return None;
    }
    let angle = (x_cam.x * x_cam.x + x_cam.y * x_cam.y).sqrt().atan2(x_cam.z);
    if angle > max_angle {
        return None;
    }
    let px = cam.project(x_cam).ok()?;
    let m = 2.0;
    (px.x >= m && px.y >= m && px.x <= size[0] as f64 - m && px.y <= size[1] as f64 - m).then_some(px)
}

/// Half-angle of the cone within which `cam` maps monotonically to the image.
fn fov_half_angle(cam: &CameraIntrinsics, size: [u32; 2]) -> f64 {
    let r = max_corner_radius(&cam.principal_point, size) * 1.02;
    let s = cam.working_range(r).unwrap_or(match cam.model {
        CameraModel::RadTan => 1.5,
        CameraModel::Equidistant => 1.5,
    });
    match cam.model {
        CameraModel::RadTan => s.atan(),
        CameraModel::Equidistant => s.min(PI / 2.0 - 0.05),
    }
}

fn dropped_cameras(rng: &mut ChaCha8Rng, n: usize, noise: &NoiseSpec) -> Vec<bool> {
    let d = noise.dropout_ratio;
    match noise.dropout_pattern {
        DropoutPattern::Random => (0..n).map(|_| rng.random::<f64>() < d).collect(),
        DropoutPattern::NoCompleteFrameset => {
            let forced = rng.random_range(0..n);
            let p = ((d * n as f64 - 1.0) / (n as f64 - 1.0)).clamp(0.0, 1.0);
            let mut dropped: Vec<bool> = (0..n).map(|i| i == forced || rng.random::<f64>() < p).collect();
            // Keep at least two cameras so the frameset still constrains the rig.
            while dropped.iter().filter(|x| !**x).count() < 2 {
                let k = rng.random_range(0..n);
                if k != forced {
                    dropped[k] = false;
                }
            }
            dropped
        }
    }
}

/// Generates a calibration session under the given rig, scene and noise.
pub fn generate_session(
    preset: &RigPreset,
    scene: &SceneSpec,
    noise: &NoiseSpec,
) -> Result<(CalibrationSession, GroundTruth)> {
    let n = preset.num_cameras();
    if n == 0 || preset.intrinsics.len() != n || preset.image_sizes.len() != n {
        return Err(Error::InfeasibleSpec("rig must list extrinsics, intrinsics and image size per camera".into()));
    }
    for (name, r) in [("outlier", noise.outlier_ratio), ("dropout", noise.dropout_ratio)] {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InfeasibleSpec(format!("{name} ratio must be in [0, 1), got {r}")));
        }
    }
    if !(noise.pixel_sigma >= 0.0 && noise.pixel_sigma.is_finite()) {
        return Err(Error::InfeasibleSpec(format!("pixel sigma must be non-negative, got {}", noise.pixel_sigma)));
    }
    if noise.dropout_pattern == DropoutPattern::NoCompleteFrameset && n < 3 {
        return Err(Error::InfeasibleSpec("dropping a camera from every frameset needs at least 3 cameras".into()));
    }
    if scene.framesets == 0 || scene.points == 0 || scene.max_observations_per_image == 0 {
        return Err(Error::InfeasibleSpec("framesets, points and observations per image must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let [r0, r1] = scene.shell_radii;
    let [h0, h1] = scene.shell_heights;
    let points: Vec<MapPoint> = (0..scene.points)
        .map(|k| {
            let radius = (r0 * r0 + rng.random::<f64>() * (r1 * r1 - r0 * r0)).sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            MapPoint {
                id: 10_000 + 3 * k as u64,
                position: Vector3::new(radius * phi.cos(), radius * phi.sin(), rng.random_range(h0..h1)),
            }
        })
        .collect();

    let loop_len = scene.loop_length.max(1) as f64;
    let rig_poses: Vec<RigidPose> = (0..scene.framesets)
        .map(|j| trajectory_pose(scene.trajectory_radius, 2.0 * PI * j as f64 / loop_len))
        .collect();
    let fov: Vec<f64> = (0..n)
        .map(|i| fov_half_angle(&preset.intrinsics[i], preset.image_sizes[i]))
        .collect();
    let pixel_noise = Normal::new(0.0, noise.pixel_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");

    type FramesetData = (Frameset, Vec<Vec<bool>>, Vec<bool>, usize);
    let frames: Vec<FramesetData> = par::map_range(Execution::Parallel, scene.framesets, |j| {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(j as u64 + 1);
        let dropped = dropped_cameras(&mut rng, n, noise);
        let mut cameras = Vec::with_capacity(n);
        let mut inliers = Vec::with_capacity(n);
        let mut visible_total = 0;
        for i in 0..n {
            let cam = &preset.intrinsics[i];
            let size = preset.image_sizes[i];
            let to_cam = preset.extrinsics[i].compose(&rig_poses[j]);
            let seen: Vec<(usize, Vector2<f64>)> = points
                .iter()
                .enumerate()
                .filter_map(|(k, p)| visible(cam, size, fov[i], &to_cam.transform(&p.position)).map(|px| (k, px)))
                .collect();
            let chosen = index::sample(&mut rng, seen.len(), seen.len().min(scene.max_observations_per_image));
            let mut obs = Vec::with_capacity(chosen.len());
            let mut mask = Vec::with_capacity(chosen.len());
            for c in chosen.iter() {
                let (k, px) = seen[c];
                let outlier = rng.random::<f64>() < noise.outlier_ratio;
                let pixel = if outlier {
                    Vector2::new(rng.random_range(0.0..size[0] as f64), rng.random_range(0.0..size[1] as f64))
                } else if noise.pixel_sigma > 0.0 {
                    px + Vector2::new(pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng))
                } else {
                    px
                };
                obs.push(Observation2D { point_id: points[k].id, pixel });
                mask.push(!outlier);
            }
            if dropped[i] {
                obs.clear();
                mask.clear();
            } else {
                visible_total += obs.len();
            }
            cameras.push(obs);
            inliers.push(mask);
        }
        let frameset = Frameset {
            id: j as u64,
            timestamp: j as f64 * scene.frame_interval,
            cameras,
        };
        (frameset, inliers, dropped, visible_total)
    });

    let surviving: usize = frames.iter().map(|f| f.2.iter().filter(|d| !**d).count()).sum();
    let visible: usize = frames.iter().map(|f| f.3).sum();
    if surviving == 0 || (visible as f64) < 5.0 * surviving as f64 {
        return Err(Error::InfeasibleSpec(format!(
            "{:.2} visible points per image on average, at least 5 required",
            visible as f64 / surviving.max(1) as f64
        )));
    }

    let mut framesets = Vec::with_capacity(frames.len());
    let mut inliers = Vec::with_capacity(frames.len());
    let mut dropped = Vec::with_capacity(frames.len());
    for (f, m, d, _) in frames {
        framesets.push(f);
        inliers.push(m);
        dropped.push(d);
    }
    let session = CalibrationSession {
        image_sizes: preset.image_sizes.clone(),
        map_scale: 1.0,
        points,
        framesets,
    };
    let truth = GroundTruth {
        extrinsics: preset.extrinsics.clone(),
        intrinsics: preset.intrinsics.clone(),
        rig_poses,
        inliers,
        dropped,
    };
    Ok((session, truth))
}

/// Sliding windows of `count` framesets taken every `spacing` framesets:
/// window `s` holds framesets `s, s + spacing, …, s + (count − 1) spacing`.
pub fn make_short_subsequences(session: &CalibrationSession, count: usize, spacing: usize) -> Vec<CalibrationSession> {
    if count == 0 || spacing == 0 {
        return Vec::new();
    }
    let span = (count - 1) * spacing;
    if span >= session.framesets.len() {
        return Vec::new();
    }
    (0..session.framesets.len() - span)
        .map(|start| CalibrationSession {
            image_sizes: session.image_sizes.clone(),
            map_scale: session.map_scale,
            points: session.points.clone(),
            framesets: (0..count)
                .map(|k| session.framesets[start + k * spacing].clone())
                .collect(),
        })
        .collect()
}
