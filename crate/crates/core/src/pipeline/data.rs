use nalgebra::{Vector2, Vector3};

use super::session::CalibrationSession;
use crate::error::Result;
use crate::geometry::EPS;
use crate::optim::Observation;

/// Correspondences of one image with map points resolved to indices.
#[derive(Debug, Clone, Default)]
pub(crate) struct Image {
    pub pixels: Vec<Vector2<f64>>,
    pub points: Vec<usize>,
}

impl Image {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }
}

/// Session with point ids resolved once: `images[j][i]` is camera `i` in the
/// frameset at position `j`.
pub(crate) struct SessionData {
    pub positions: Vec<Vector3<f64>>,
    pub images: Vec<Vec<Image>>,
}

impl SessionData {
    pub fn new(session: &CalibrationSession) -> Result<Self> {
        let index = session.point_index()?;
        let positions = session.points.iter().map(|p| p.position).collect();
        let mut images = Vec::with_capacity(session.framesets.len());
        for f in &session.framesets {
            let mut row = Vec::with_capacity(f.cameras.len());
            for obs in &f.cameras {
                let mut img = Image::default();
                for o in obs {
                    let k = *index.get(&o.point_id).ok_or(crate::Error::Integrity(o.point_id))?;
                    img.pixels.push(o.pixel);
                    img.points.push(k);
                }
                row.push(img);
            }
            images.push(row);
        }
        Ok(Self { positions, images })
    }
}

/// Distance from a centered observation `v` to the radial half-line spanned
/// by `u`: the orthogonal distance when `v` lies on the side `u` points to,
/// `‖v‖` otherwise. `None` when `u` vanishes.
pub fn half_line_residual(u: &Vector2<f64>, v: &Vector2<f64>) -> Option<f64> {
    let uu = u.norm_squared();
    if uu.sqrt() <= EPS {
        return None;
    }
    let uv = u.dot(v);
    if uv <= 0.0 {
        return Some(v.norm());
    }
    Some((u * (uv / uu) - v).norm())
}

/// Observations over a subset of framesets, with `frameset_of_pose[p]` the
/// session position of the frameset whose pose is `poses[p]` in the
/// optimization problem.
#[derive(Debug, Clone, Default)]
pub struct ObservationSet {
    pub observations: Vec<Observation>,
    pub frameset_of_pose: Vec<usize>,
}

/// 64-bit mix of a base seed with a stream tag and two indices (SplitMix64
/// finalizer), so per-item random streams are independent of scheduling.
pub(crate) fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ b.wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_line_distance() {
        let u = Vector2::new(1.0, 0.0);
        assert_eq!(half_line_residual(&u, &Vector2::new(3.0, 4.0)), Some(4.0));
        assert_eq!(half_line_residual(&u, &Vector2::new(-3.0, 4.0)), Some(5.0));
        assert_eq!(half_line_residual(&Vector2::zeros(), &Vector2::new(1.0, 1.0)), None);
    }

    #[test]
    fn seeds_differ_per_index() {
        let a = derive_seed(1, 0, 2, 3);
        assert_ne!(a, derive_seed(1, 0, 3, 2));
        assert_ne!(a, derive_seed(2, 0, 2, 3));
        assert_eq!(a, derive_seed(1, 0, 2, 3));
    }
}
