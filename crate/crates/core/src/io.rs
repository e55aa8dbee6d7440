//! File formats: sessions (JSON, with a binary variant for large inputs),
//! calibration results and the inlier-membership sidecar of synthetic runs.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix4, Vector2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraModel, RigidPose};
use crate::pipeline::{
    CalibrationConfig, CalibrationResult, CalibrationSession, Diagnostics, Frameset, MapPoint, Observation2D,
};
use crate::synth::{GroundTruth, NoiseSpec, SceneSpec};

pub const SESSION_FORMAT: &str = "rigcal-session";
pub const CALIBRATION_FORMAT: &str = "rigcal-calibration";
pub const MEMBERSHIP_FORMAT: &str = "rigcal-membership";
pub const FORMAT_VERSION: u32 = 1;

/// First bytes of a binary session file.
pub const BINARY_SESSION_MAGIC: &[u8; 8] = b"RIGCALSB";

/// Tolerance on orthonormality of stored extrinsic matrices.
pub const RIGIDITY_TOLERANCE: f64 = 1e-6;

type Matrix4Rows = [[f64; 4]; 4];

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

fn check_header(kind: &str, format: &str, version: u32) -> Result<()> {
    if format != kind {
        return Err(Error::Parse(format!("field `format`: expected \"{kind}\", found \"{format}\"")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "field `version`: unsupported version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(with_path(path))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(format!("file is not UTF-8: {e}")))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(with_path(path))?;
    f.write_all(bytes).map_err(with_path(path))?;
    f.sync_all().map_err(with_path(path))?;
    Ok(())
}

// ---------------------------------------------------------------- sessions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionHeader {
    pub camera_count: usize,
    /// `[width, height]` in pixels, per camera.
    pub image_sizes: Vec<[u32; 2]>,
    /// Metres per map unit.
    pub map_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesetRecord {
    pub id: u64,
    pub timestamp: f64,
    /// Per camera, `(point_id, u, v)` correspondences.
    pub cameras: Vec<Vec<(u64, f64, f64)>>,
}

/// On-disk session document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionFile {
    pub format: String,
    pub version: u32,
    pub header: SessionHeader,
    /// `(id, x, y, z)` rows.
    pub points: Vec<(u64, f64, f64, f64)>,
    pub framesets: Vec<FramesetRecord>,
}

impl SessionFile {
    pub fn from_session(s: &CalibrationSession) -> Self {
        SessionFile {
            format: SESSION_FORMAT.into(),
            version: FORMAT_VERSION,
            header: SessionHeader {
                camera_count: s.num_cameras(),
                image_sizes: s.image_sizes.clone(),
                map_scale: s.map_scale,
            },
            points: s
                .points
                .iter()
                .map(|p| (p.id, p.position.x, p.position.y, p.position.z))
                .collect(),
            framesets: s
                .framesets
                .iter()
                .map(|f| FramesetRecord {
                    id: f.id,
                    timestamp: f.timestamp,
                    cameras: f
                        .cameras
                        .iter()
                        .map(|c| c.iter().map(|o| (o.point_id, o.pixel.x, o.pixel.y)).collect())
                        .collect(),
                })
                .collect(),
        }
    }

    /// Converts and validates; the first dangling point id is reported as
    /// an integrity error.
    pub fn into_session(self) -> Result<CalibrationSession> {
        check_header(SESSION_FORMAT, &self.format, self.version)?;
        if self.header.camera_count != self.header.image_sizes.len() {
            return Err(Error::Parse(format!(
                "field `header.image_sizes`: {} entries for camera_count {}",
                self.header.image_sizes.len(),
                self.header.camera_count
            )));
        }
        for (k, f) in self.framesets.iter().enumerate() {
            if f.cameras.len() != self.header.camera_count {
                return Err(Error::Parse(format!(
                    "field `framesets[{k}].cameras`: {} lists for camera_count {}",
                    f.cameras.len(),
                    self.header.camera_count
                )));
            }
        }
        let session = CalibrationSession {
            image_sizes: self.header.image_sizes,
            map_scale: self.header.map_scale,
            points: self
                .points
                .into_iter()
                .map(|(id, x, y, z)| MapPoint {
                    id,
                    position: nalgebra::Vector3::new(x, y, z),
                })
                .collect(),
            framesets: self
                .framesets
                .into_iter()
                .map(|f| Frameset {
                    id: f.id,
                    timestamp: f.timestamp,
                    cameras: f
                        .cameras
                        .into_iter()
                        .map(|c| {
                            c.into_iter()
                                .map(|(point_id, u, v)| Observation2D {
                                    point_id,
                                    pixel: Vector2::new(u, v),
                                })
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        };
        session.validate()?;
        Ok(session)
    }
}

pub fn session_to_json(session: &CalibrationSession) -> String {
    serde_json::to_string(&SessionFile::from_session(session)).expect("session serializes")
}

pub fn session_from_json(text: &str) -> Result<CalibrationSession> {
    parse_json::<SessionFile>(text)?.into_session()
}

/// Length-prefixed little-endian encoding with the same logical schema as
/// the JSON document.
pub fn session_to_binary(session: &CalibrationSession) -> Vec<u8> {
    let mut w = Vec::new();
    w.extend_from_slice(BINARY_SESSION_MAGIC);
    let put = |w: &mut Vec<u8>| -> std::io::Result<()> {
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(session.num_cameras() as u32)?;
        for [width, height] in &session.image_sizes {
            w.write_u32::<LittleEndian>(*width)?;
            w.write_u32::<LittleEndian>(*height)?;
        }
        w.write_f64::<LittleEndian>(session.map_scale)?;
        w.write_u64::<LittleEndian>(session.points.len() as u64)?;
        for p in &session.points {
            w.write_u64::<LittleEndian>(p.id)?;
            for c in p.position.iter() {
                w.write_f64::<LittleEndian>(*c)?;
            }
        }
        w.write_u64::<LittleEndian>(session.framesets.len() as u64)?;
        for f in &session.framesets {
            w.write_u64::<LittleEndian>(f.id)?;
            w.write_f64::<LittleEndian>(f.timestamp)?;
            for cam in &f.cameras {
                w.write_u64::<LittleEndian>(cam.len() as u64)?;
                for o in cam {
                    w.write_u64::<LittleEndian>(o.point_id)?;
                    w.write_f64::<LittleEndian>(o.pixel.x)?;
                    w.write_f64::<LittleEndian>(o.pixel.y)?;
                }
            }
        }
        Ok(())
    };
    put(&mut w).expect("writing to memory");
    w
}

pub fn session_from_binary(bytes: &[u8]) -> Result<CalibrationSession> {
    if bytes.len() < BINARY_SESSION_MAGIC.len() || &bytes[..8] != BINARY_SESSION_MAGIC {
        return Err(Error::Parse("missing binary session magic".into()));
    }
    let mut r = Cursor::new(&bytes[8..]);
    let at = |r: &Cursor<&[u8]>, what: &str| Error::Parse(format!("byte offset {}: truncated {what}", r.position() + 8));
    // Counts are bounded by the remaining bytes so corrupt input cannot
    // trigger huge allocations.
    let count = |r: &mut Cursor<&[u8]>, what: &str, min_item: u64| -> Result<usize> {
        let n = r.read_u64::<LittleEndian>().map_err(|_| at(r, what))?;
        let left = (r.get_ref().len() as u64).saturating_sub(r.position());
        if n.saturating_mul(min_item) > left {
            return Err(Error::Parse(format!("byte offset {}: {what} count {n} exceeds file size", r.position() + 8)));
        }
        Ok(n as usize)
    };
    let version = r.read_u32::<LittleEndian>().map_err(|_| at(&r, "version"))?;
    check_header(SESSION_FORMAT, SESSION_FORMAT, version)?;
    let n = r.read_u32::<LittleEndian>().map_err(|_| at(&r, "camera count"))? as usize;
    if n as u64 * 8 > bytes.len() as u64 {
        return Err(Error::Parse(format!("camera count {n} exceeds file size")));
    }
    let mut image_sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let w = r.read_u32::<LittleEndian>().map_err(|_| at(&r, "image size"))?;
        let h = r.read_u32::<LittleEndian>().map_err(|_| at(&r, "image size"))?;
        image_sizes.push([w, h]);
    }
    let map_scale = r.read_f64::<LittleEndian>().map_err(|_| at(&r, "map scale"))?;
    let np = count(&mut r, "point table", 32)?;
    let mut points = Vec::with_capacity(np);
    for _ in 0..np {
        let id = r.read_u64::<LittleEndian>().map_err(|_| at(&r, "point"))?;
        let mut c = [0.0; 3];
        r.read_f64_into::<LittleEndian>(&mut c).map_err(|_| at(&r, "point"))?;
        points.push(MapPoint {
            id,
            position: nalgebra::Vector3::from(c),
        });
    }
    let nf = count(&mut r, "frameset table", 16)?;
    let mut framesets = Vec::with_capacity(nf);
    for _ in 0..nf {
        let id = r.read_u64::<LittleEndian>().map_err(|_| at(&r, "frameset"))?;
        let timestamp = r.read_f64::<LittleEndian>().map_err(|_| at(&r, "frameset"))?;
        let mut cameras = Vec::with_capacity(n);
        for _ in 0..n {
            let k = count(&mut r, "correspondence list", 24)?;
            let mut obs = Vec::with_capacity(k);
            for _ in 0..k {
                let point_id = r.read_u64::<LittleEndian>().map_err(|_| at(&r, "correspondence"))?;
                let u = r.read_f64::<LittleEndian>().map_err(|_| at(&r, "correspondence"))?;
                let v = r.read_f64::<LittleEndian>().map_err(|_| at(&r, "correspondence"))?;
                obs.push(Observation2D {
                    point_id,
                    pixel: Vector2::new(u, v),
                });
            }
            cameras.push(obs);
        }
        framesets.push(Frameset { id, timestamp, cameras });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse(format!("{} trailing bytes after frameset table", rest.len())));
    }
    let session = CalibrationSession {
        image_sizes,
        map_scale,
        points,
        framesets,
    };
    session.validate()?;
    Ok(session)
}

/// Reads either session encoding, detected by the binary magic.
pub fn read_session(path: impl AsRef<Path>) -> Result<CalibrationSession> {
    let bytes = fs::read(path.as_ref()).map_err(with_path(path.as_ref()))?;
    if bytes.starts_with(BINARY_SESSION_MAGIC) {
        return session_from_binary(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse(format!("file is not UTF-8: {e}")))?;
    session_from_json(&text)
}

pub fn write_session(path: impl AsRef<Path>, session: &CalibrationSession) -> Result<()> {
    write_bytes(path.as_ref(), session_to_json(session).as_bytes())
}

pub fn write_session_binary(path: impl AsRef<Path>, session: &CalibrationSession) -> Result<()> {
    write_bytes(path.as_ref(), &session_to_binary(session))
}

// ------------------------------------------------------------ calibrations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub model: CameraModel,
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub distortion: [f64; 4],
    /// Rig-to-camera transform, row-major.
    pub extrinsic: Matrix4Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigPoseRecord {
    pub frameset_id: u64,
    /// World-to-rig transform, row-major.
    pub pose: Matrix4Rows,
}

/// Parameters of the synthetic generator, echoed in ground-truth files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEcho {
    pub preset: String,
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
}

/// On-disk calibration document. Results carry diagnostics and the full
/// effective configuration; ground-truth files carry the generator echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub format: String,
    pub version: u32,
    pub cameras: Vec<CameraRecord>,
    pub rig_poses: Vec<RigPoseRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refined_points: Vec<(u64, f64, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<CalibrationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorEcho>,
}

fn rows(m: &Matrix4<f64>) -> Matrix4Rows {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

fn from_rows(rows: &Matrix4Rows) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| rows[r][c])
}

/// Checks that a stored 4×4 matrix is a rigid transform.
fn check_rigid(m: &Matrix4Rows, field: &str) -> Result<()> {
    let m = from_rows(m);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("field `{field}`: non-finite entry")));
    }
    let r = m.fixed_view::<3, 3>(0, 0);
    let ortho = (r.transpose() * r - nalgebra::Matrix3::identity()).amax();
    let last = (m.row(3) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).amax();
    if ortho > RIGIDITY_TOLERANCE || r.determinant() < 0.0 || last > RIGIDITY_TOLERANCE {
        return Err(Error::Parse(format!("field `{field}`: not a rigid transform")));
    }
    Ok(())
}

impl CalibrationFile {
    fn new(intrinsics: &[CameraIntrinsics], extrinsics: &[RigidPose], rig_poses: Vec<RigPoseRecord>) -> Self {
        CalibrationFile {
            format: CALIBRATION_FORMAT.into(),
            version: FORMAT_VERSION,
            cameras: intrinsics
                .iter()
                .zip(extrinsics)
                .map(|(k, p)| CameraRecord {
                    model: k.model,
                    focal: k.focal,
                    principal_point: [k.principal_point.x, k.principal_point.y],
                    distortion: k.distortion,
                    extrinsic: rows(&p.matrix()),
                })
                .collect(),
            rig_poses,
            refined_points: Vec::new(),
            diagnostics: None,
            config: None,
            generator: None,
        }
    }

    pub fn from_result(result: &CalibrationResult) -> Self {
        let mut f = Self::new(
            &result.intrinsics,
            &result.extrinsics,
            result
                .rig_poses
                .iter()
                .map(|p| RigPoseRecord {
                    frameset_id: p.frameset_id,
                    pose: rows(&p.pose.matrix()),
                })
                .collect(),
        );
        f.refined_points = result
            .refined_points
            .iter()
            .map(|p| (p.id, p.position.x, p.position.y, p.position.z))
            .collect();
        f.diagnostics = Some(result.diagnostics.clone());
        f.config = Some(result.config.clone());
        f
    }

    /// Ground truth of a synthetic session; rig poses of every frameset.
    pub fn from_ground_truth(gt: &GroundTruth, session: &CalibrationSession, generator: GeneratorEcho) -> Self {
        let mut f = Self::new(
            &gt.intrinsics,
            &gt.extrinsics,
            session
                .framesets
                .iter()
                .zip(&gt.rig_poses)
                .map(|(fs, q)| RigPoseRecord {
                    frameset_id: fs.id,
                    pose: rows(&q.matrix()),
                })
                .collect(),
        );
        f.generator = Some(generator);
        f
    }

    pub fn validate(&self) -> Result<()> {
        check_header(CALIBRATION_FORMAT, &self.format, self.version)?;
        if self.cameras.is_empty() {
            return Err(Error::Parse("field `cameras`: empty".into()));
        }
        for (i, c) in self.cameras.iter().enumerate() {
            check_rigid(&c.extrinsic, &format!("cameras[{i}].extrinsic"))?;
            let finite = c.focal.is_finite()
                && c.principal_point.iter().all(|v| v.is_finite())
                && c.distortion.iter().all(|v| v.is_finite());
            if !finite || c.focal <= 0.0 {
                return Err(Error::Parse(format!("field `cameras[{i}]`: invalid intrinsics")));
            }
        }
        for (k, p) in self.rig_poses.iter().enumerate() {
            check_rigid(&p.pose, &format!("rig_poses[{k}].pose"))?;
        }
        Ok(())
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn intrinsics(&self) -> Vec<CameraIntrinsics> {
        self.cameras
            .iter()
            .map(|c| {
                CameraIntrinsics::new(
                    c.model,
                    c.focal,
                    Vector2::new(c.principal_point[0], c.principal_point[1]),
                    c.distortion,
                )
            })
            .collect()
    }

    pub fn extrinsics(&self) -> Vec<RigidPose> {
        self.cameras
            .iter()
            .map(|c| RigidPose::from_matrix(&from_rows(&c.extrinsic)))
            .collect()
    }

    /// Configuration used for the run, or the defaults for the stored model
    /// when the file carries none (ground truth).
    pub fn effective_config(&self) -> CalibrationConfig {
        self.config
            .clone()
            .unwrap_or_else(|| CalibrationConfig::with_model(self.cameras[0].model))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("calibration serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CalibrationFile = parse_json(text)?;
        f.validate()?;
        Ok(f)
    }
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<CalibrationFile> {
    CalibrationFile::from_json(&read_text(path.as_ref())?)
}

pub fn write_calibration(path: impl AsRef<Path>, file: &CalibrationFile) -> Result<()> {
    write_bytes(path.as_ref(), file.to_json().as_bytes())
}

// ------------------------------------------------------------- membership

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipRecord {
    pub frameset_id: u64,
    /// Cameras whose image was removed.
    pub dropped: Vec<usize>,
    /// Per camera, indices of correspondences that are outliers.
    pub outliers: Vec<Vec<usize>>,
}

/// Inlier membership of every synthetic correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipFile {
    pub format: String,
    pub version: u32,
    pub framesets: Vec<MembershipRecord>,
}

impl MembershipFile {
    pub fn from_ground_truth(gt: &GroundTruth, session: &CalibrationSession) -> Self {
        MembershipFile {
            format: MEMBERSHIP_FORMAT.into(),
            version: FORMAT_VERSION,
            framesets: session
                .framesets
                .iter()
                .enumerate()
                .map(|(j, f)| MembershipRecord {
                    frameset_id: f.id,
                    dropped: (0..gt.dropped[j].len()).filter(|&i| gt.dropped[j][i]).collect(),
                    outliers: gt.inliers[j]
                        .iter()
                        .map(|m| (0..m.len()).filter(|&k| !m[k]).collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: MembershipFile = parse_json(text)?;
        check_header(MEMBERSHIP_FORMAT, &f.format, f.version)?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("membership serializes")
    }
}

pub fn read_membership(path: impl AsRef<Path>) -> Result<MembershipFile> {
    MembershipFile::from_json(&read_text(path.as_ref())?)
}

pub fn write_membership(path: impl AsRef<Path>, file: &MembershipFile) -> Result<()> {
    write_bytes(path.as_ref(), file.to_json().as_bytes())
}

/// Any serializable value as pretty JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}
