//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Error`]. The CLI maps
//! errors onto process exit codes: 1 for usage/config problems, 2 for data
//! problems, 3 for numerical failures.

use thiserror::Error;

use crate::dataset::GazeClass;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("marker id {0} not present in the board layout")]
    UnknownMarker(u32),

    #[error("angular error is undefined for a zero-length vector")]
    ZeroVector,

    #[error("frame has no keypoints with confidence > 0")]
    NoValidKeypoints,

    #[error("gaze target coincides with the face centroid")]
    DegenerateTarget,

    #[error("valid keypoints are coincident; feature scale is undefined")]
    DegenerateGeometry,

    #[error("subject-wise splitting needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("expected {expected} keypoints, got {found} (line {line})")]
    WrongKeypointCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("class {0:?} has zero samples")]
    MissingClass(GazeClass),

    #[error(
        "dual solver did not converge within {iterations} iterations \
         (final KKT violation {violation:.3e})"
    )]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("class {class:?} has {found} samples, fewer than the {folds} folds")]
    TooFewSamples {
        class: GazeClass,
        found: usize,
        folds: usize,
    },

    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("length mismatch: {left} predictions vs {right} ground-truth entries")]
    LengthMismatch { left: usize, right: usize },

    #[error("no frames both labelled and predicted as workspace; 2D RMSE is undefined")]
    NoWorkspaceFrames,

    #[error("frame {0} has no ground-truth label")]
    MissingLabel(String),

    #[error("frame {0} is labelled workspace but carries no gaze target")]
    MissingTarget(String),

    #[error("model file not found: {0}")]
    ModelMissing(String),

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigError(_) => 1,
            Error::NonConvergence { .. } | Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}
