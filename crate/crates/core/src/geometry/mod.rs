//! Rotations, rigid and radial poses, camera models and the two projection
//! functions used throughout: full projection into the image and radial
//! projection onto the line through the principal point.

mod camera;
mod division;
mod pose;
mod radial;

pub use camera::*;
pub use division::*;
pub use pose::*;
pub use radial::*;
