//! Error type shared across the crate.

use thiserror::Error;

use crate::tensor::Coord3;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("coordinate {coord:?} out of bounds for dims {dims:?}")]
    OutOfBounds {
        coord: Coord3,
        dims: (usize, usize, usize),
    },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u32),
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error("channel allocation infeasible: {0}")]
    ChannelAllocation(String),
    #[error("parameter shape mismatch: {0}")]
    ParamShape(String),
    #[error("missing reference mask")]
    MissingReferenceMask,
    #[error("mask label {label} out of range for {objects} generalized objects")]
    LabelOutOfRange { label: usize, objects: usize },
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
