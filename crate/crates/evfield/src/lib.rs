//! Event-field self-supervised learning for multichannel waveforms.
//!
//! A self-contained pretrain/probe/retrieve/robustness pipeline built on
//! synthetic latent-event corpora: waveforms are generated as superpositions
//! of parametric event atoms, augmented through seeded time-frequency
//! projections, partitioned by stochastic segmentations, and encoded by a
//! segment-pooling encoder with a kernelized interaction operator trained
//! under InfoNCE consistency plus boundary regularization.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod projections;
pub mod rng;
pub mod segmentation;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

use thiserror::Error;

/// Top-level error for pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt data in {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn corrupt(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}
