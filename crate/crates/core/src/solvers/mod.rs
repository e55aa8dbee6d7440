//! Closed-form and minimal solvers.

mod align;
mod p5p;
pub(crate) mod poly;
mod rig_pose;
mod upgrade;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub use align::{align_rigid, align_rigid_weighted};
pub use p5p::solve_p5p_radial;
pub use rig_pose::{axis_conditioning, solve_rig_pose, solve_rig_pose_conditioned, RIG_POSE_CONDITIONING};
pub use upgrade::{solve_upgrade_linear, UpgradeCorrespondence, UpgradeSolution};

/// An observed pixel and the map point it is matched to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence2D3D {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub point_id: u64,
}

/// Observation relative to the principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteredCorrespondence {
    pub v: Vector2<f64>,
    pub point: Vector3<f64>,
}

impl CenteredCorrespondence {
    pub fn from_correspondence(c: &Correspondence2D3D, principal_point: &Vector2<f64>) -> Self {
        Self {
            v: c.pixel - principal_point,
            point: c.point,
        }
    }
}
