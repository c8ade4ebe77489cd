use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size must be odd, got {0}")]
    EvenGrid(usize),

    #[error("missing view ({row},{col})")]
    MissingView { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("channel {channel} out of range for {channels}-channel data")]
    ChannelOutOfRange { channel: usize, channels: usize },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("viewpoint ({u},{v}) outside a {grid}x{grid} grid")]
    ViewpointOutOfGrid { u: i32, v: i32, grid: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unalignable region: region of interest has zero variance")]
    Unalignable,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("bad PFM file: {0}")]
    Pfm(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
