use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::Correspondence2D3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// A pixel matched to the map point `point_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation2D {
    pub point_id: u64,
    pub pixel: Vector2<f64>,
}

/// Images captured by the rig at one timestamp. `cameras[i]` holds the
/// matches of camera `i`; an empty list means no usable image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frameset {
    pub id: u64,
    pub timestamp: f64,
    pub cameras: Vec<Vec<Observation2D>>,
}

/// A sparse map and a sequence of synchronized rig captures registered to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSession {
    /// `[width, height]` per camera; its length is the camera count.
    pub image_sizes: Vec<[u32; 2]>,
    /// Metres per map unit.
    pub map_scale: f64,
    pub points: Vec<MapPoint>,
    pub framesets: Vec<Frameset>,
}

impl CalibrationSession {
    pub fn num_cameras(&self) -> usize {
        self.image_sizes.len()
    }

    pub fn num_correspondences(&self) -> usize {
        self.framesets
            .iter()
            .flat_map(|f| f.cameras.iter())
            .map(Vec::len)
            .sum()
    }

    /// Map from point id to its position in `points`. Fails on duplicate ids.
    pub fn point_index(&self) -> Result<HashMap<u64, usize>> {
        let mut index = HashMap::with_capacity(self.points.len());
        for (k, p) in self.points.iter().enumerate() {
            if index.insert(p.id, k).is_some() {
                return Err(Error::Invalid(format!("duplicate map point id {}", p.id)));
            }
        }
        Ok(index)
    }

    /// Checks every structural invariant: positive image sizes and map scale,
    /// finite coordinates, per-frameset camera lists matching the camera
    /// count, unique frameset ids and referential integrity of point ids.
    pub fn validate(&self) -> Result<()> {
        if self.image_sizes.is_empty() {
            return Err(Error::Invalid("session has no cameras".into()));
        }
        if self.image_sizes.iter().any(|s| s[0] == 0 || s[1] == 0) {
            return Err(Error::Invalid("image sizes must be positive".into()));
        }
        if !(self.map_scale > 0.0 && self.map_scale.is_finite()) {
            return Err(Error::Invalid(format!("map scale must be positive, got {}", self.map_scale)));
        }
        if self.points.iter().any(|p| !p.position.iter().all(|c| c.is_finite())) {
            return Err(Error::Invalid("non-finite map point".into()));
        }
        let index = self.point_index()?;
        let mut ids = std::collections::HashSet::with_capacity(self.framesets.len());
        for f in &self.framesets {
            if !ids.insert(f.id) {
                return Err(Error::Invalid(format!("duplicate frameset id {}", f.id)));
            }
            if !f.timestamp.is_finite() {
                return Err(Error::Invalid(format!("frameset {} has a non-finite timestamp", f.id)));
            }
            if f.cameras.len() != self.num_cameras() {
                return Err(Error::Invalid(format!(
                    "frameset {} lists {} cameras, session has {}",
                    f.id,
                    f.cameras.len(),
                    self.num_cameras()
                )));
            }
            for o in f.cameras.iter().flatten() {
                if !index.contains_key(&o.point_id) {
                    return Err(Error::Integrity(o.point_id));
                }
                if !(o.pixel.x.is_finite() && o.pixel.y.is_finite()) {
                    return Err(Error::Invalid(format!("non-finite pixel in frameset {}", f.id)));
                }
            }
        }
        Ok(())
    }

    /// Correspondences of camera `camera` in the frameset at position `frameset`.
    pub fn correspondences(&self, frameset: usize, camera: usize) -> Result<Vec<Correspondence2D3D>> {
        let index = self.point_index()?;
        self.framesets[frameset].cameras[camera]
            .iter()
            .map(|o| {
                let k = *index.get(&o.point_id).ok_or(Error::Integrity(o.point_id))?;
                Ok(Correspondence2D3D {
                    pixel: o.pixel,
                    point: self.points[k].position,
                    point_id: o.point_id,
                })
            })
            .collect()
    }

    /// Center of each camera's image, the initial principal point estimate.
    pub fn image_centers(&self) -> Vec<Vector2<f64>> {
        self.image_sizes
            .iter()
            .map(|s| Vector2::new(s[0] as f64 / 2.0, s[1] as f64 / 2.0))
            .collect()
    }
}
