use std::io;

use thiserror::Error;

/// Tree node identifier as (level, 1-based block index).
pub type NodeLabel = (usize, usize);

#[derive(Error, Debug)]
pub enum FhtError {
    #[error("variable count {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("basis mismatch between models")]
    BasisMismatch,

    #[error("dense contraction of {0} entries exceeds the guard")]
    TooLarge(usize),

    #[error("non-finite state in trajectory {trajectory} at step {step}; reduce the time step")]
    NonFiniteState { trajectory: usize, step: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("degenerate sketch matrix at node (level {}, block {})", .0.0, .0.1)]
    DegenerateNode(NodeLabel),

    #[error("node (level {}, block {}) has {available} sketch functions, needs at least rank {rank}", .node.0, .node.1)]
    SketchShortfall {
        node: NodeLabel,
        available: usize,
        rank: usize,
    },

    #[error("zero effective rank in linear solve at node (level {}, block {})", .0.0, .0.1)]
    ZeroRank(NodeLabel),

    #[error("integral is {0}; model cannot be normalized")]
    DegenerateIntegral(f64),

    #[error("conditional density is non-positive everywhere at sampling step {0}")]
    NonPositiveConditional(usize),

    #[error("zero variance at variable {0}")]
    ZeroVariance(usize),

    #[error("snapshot {index}: {source}")]
    Snapshot {
        index: usize,
        #[source]
        source: Box<FhtError>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FhtError {
    /// True when the failure comes from the numerics rather than from inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            FhtError::NonFiniteState { .. }
            | FhtError::DegenerateNode(_)
            | FhtError::ZeroMatrix
            | FhtError::ZeroRank(_)
            | FhtError::DegenerateIntegral(_)
            | FhtError::NonPositiveConditional(_)
            | FhtError::ZeroVariance(_) => true,
            FhtError::Snapshot { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, FhtError>;
