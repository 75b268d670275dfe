//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle within 1e-6 of pi; se(3) log is ill-conditioned there")]
    RotationNearPi,
    #[error("row {row} out of range for image height {height}")]
    InvalidRow { row: usize, height: usize },
    #[error("pose count {n_pose} out of range for image height {height}")]
    InvalidPoseCount { n_pose: usize, height: usize },
    #[error("pixel ({u}, {v}) outside a {width}x{height} image")]
    PixelOutOfRange { u: usize, v: usize, width: usize, height: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("expected {expected} row renders, got {got}")]
    RowCountMismatch { expected: usize, got: usize },
    #[error("trajectory does not cover time {time} (span {t_min}..{t_max})")]
    TrajectoryTooShort { time: f64, t_min: f64, t_max: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("images mismatch: {0}")]
    ImagesMismatch(String),
    #[error("smoothness loss needs at least 2 frames")]
    TooFewFrames,
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("trajectory count mismatch: estimated {estimated}, ground truth {ground_truth}")]
    CountMismatch { estimated: usize, ground_truth: usize },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("synthesis error: {0}")]
    Synthesis(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
