//! Multi-camera rig calibration from a pre-built sparse map.
//!
//! The calibration runs in five stages: per-image 1D radial pose estimation,
//! robust radial rig initialization, radial bundle adjustment, per-camera
//! upgrade to full intrinsics and forward translation, and a final bundle
//! adjustment over all parameters. A synthetic scenario generator and the
//! evaluation metrics live alongside so each stage can be checked against
//! ground truth.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod robust;
pub mod solvers;
pub mod synth;

pub use error::{Error, Result, Stage};
pub use par::Execution;
