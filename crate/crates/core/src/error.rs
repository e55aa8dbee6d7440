use std::fmt;

use thiserror::Error;

/// Pipeline stage labels attached to propagated errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    RadialPoses,
    RigInit,
    RadialBundleAdjust,
    Upgrade,
    FinalBundleAdjust,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::RadialPoses => "stage 1 (radial pose estimation)",
            Stage::RigInit => "stage 2 (radial rig initialization)",
            Stage::RadialBundleAdjust => "stage 3 (radial bundle adjustment)",
            Stage::Upgrade => "stage 4 (forward translation and intrinsics)",
            Stage::FinalBundleAdjust => "stage 5 (final refinement)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical domain violation: {0}")]
    NumericalDomain(&'static str),
    #[error("point projects onto the distortion center")]
    DegenerateProjection,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("rig pose is unobservable: principal axes are (near) parallel")]
    ParallelAxesDegenerate,
    #[error("no valid solution: {0}")]
    NoValidSolution(String),
    #[error("not enough inliers: best model has {found}, need {required}")]
    NotEnoughInliers { found: usize, required: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure in least squares: {0}")]
    NumericalFailure(&'static str),
    #[error("no image could be registered")]
    EmptyRegistration,
    #[error("registered cameras and framesets do not form a connected rig")]
    UnconnectedRig,
    #[error("no rig initialization trial reached closure")]
    AllTrialsFailed,
    #[error("infeasible synthetic scenario: {0}")]
    InfeasibleSpec(String),
    #[error("holdout does not agree with the calibration (inlier fraction {inlier_fraction:.3})")]
    HoldoutMismatch { inlier_fraction: f64 },
    #[error("camera count mismatch: {0} vs {1}")]
    CameraCountMismatch(usize, usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("integrity error: dangling point id {0}")]
    Integrity(u64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    InStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::InStage { .. } => e,
            e => Error::InStage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::InStage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code of the command-line tool for this error class.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parse(_) | Error::Integrity(_) | Error::Invalid(_) | Error::Io(_) => 3,
            Error::ParallelAxesDegenerate | Error::UnconnectedRig | Error::DegenerateConfiguration(_) => 4,
            Error::NoValidSolution(_)
            | Error::AllTrialsFailed
            | Error::EmptyRegistration
            | Error::NotEnoughInliers { .. } => 5,
            Error::InfeasibleSpec(_) => 6,
            Error::CameraCountMismatch(..) | Error::HoldoutMismatch { .. } => 7,
            _ => 1,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::InStage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
