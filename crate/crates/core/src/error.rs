//! Error type shared across the pipeline.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("detection score {0} outside [0, 1]")]
    InvalidScore(f64),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("frame {idx} out of range (frame_count = {frame_count})")]
    FrameOutOfRange { idx: usize, frame_count: usize },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("patch size mismatch: {a_w}x{a_h} vs {b_w}x{b_h}")]
    PatchSizeMismatch {
        a_w: u32,
        a_h: u32,
        b_w: u32,
        b_h: u32,
    },

    #[error("patch {w}x{h} smaller than {min} pixel window")]
    PatchTooSmall { w: u32, h: u32, min: u32 },

    #[error("background model has no updates yet")]
    UninitializedModel,

    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("stage {stage} failed at frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
