//! Sparse spatiotemporal attention toolkit.
//!
//! Building blocks for attention over video feature volumes: sparse
//! connectivity patterns with reachability analysis, dense and sparse
//! attention kernels with analytic backward passes, sinusoidal positional
//! encodings, a transformer-style encoder that extracts per-object affinity
//! maps, a toy segmentation pipeline over synthetic videos, and an analytic
//! multiply-accumulate cost model.

pub mod attention;
pub mod costmodel;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod patterns;
pub mod posenc;
pub mod segmenter;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Coord3, Dims3, Matrix, VideoFeatureTensor};
