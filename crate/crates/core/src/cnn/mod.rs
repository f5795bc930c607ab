//! Sequential VGG-style network inference.
//!
//! Activations are stored row-major as (row, col, channel). Convolution is
//! cross-correlation (no kernel flip), which is how every published VGG weight
//! release is laid out.

mod forward;
mod ops;
mod spec;
mod weights;

use std::path::PathBuf;

use thiserror::Error;

use crate::container::ContainerError;

pub use forward::{forward, forward_with, Network, TapMode};
pub use ops::{
    conv2d, conv2d_direct, flatten, fully_connected, maxpool2d, relu, spatial_average, Activation,
    FeatureVector, Shape,
};
pub use spec::{LayerKind, LayerSpec, NetworkSpec};
pub use weights::{load_weights, Tensor, WeightStore};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("input has {found} channels, kernel expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("max pooling needs even spatial dims, got {height}x{width}")]
    OddSpatialDim { height: usize, width: usize },
    #[error("expected a vector of length {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("operation needs a spatial (H, W, C) activation")]
    NotSpatial,
    #[error("unknown tap layer `{0}`")]
    UnknownTap(String),
    #[error("shape mismatch at `{layer}`: expected {expected}, found {found}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        found: String,
    },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("bad magic in weight file: {0}")]
    BadMagic(String),
    #[error("unsupported weight file version {0}")]
    VersionUnsupported(u32),
    #[error("weight file has no tensors for layer `{0}`")]
    MissingLayer(String),
    #[error("weight file has tensor `{0}` not used by the network")]
    UnexpectedTensor(String),
    #[error("weight file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<ContainerError> for CnnError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::BadMagic { found, .. } => CnnError::BadMagic(found),
            ContainerError::VersionUnsupported(v) => CnnError::VersionUnsupported(v),
            ContainerError::TrailingBytes(n) => CnnError::TrailingBytes(n),
            other => CnnError::Malformed(other.to_string()),
        }
    }
}
