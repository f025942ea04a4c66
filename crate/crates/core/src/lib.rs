//! Hybrid contrastive learning for tri-modal sentiment regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: modalities, labels, batches, hyperparameters.
//! - [`diff`]: a small reverse-mode differentiation graph over dense
//!   matrices, plus [`gradcheck`] for central-difference verification and
//!   [`gradsuite`] for checking every loss on random batches.
//! - [`pairs`]: positive/negative partner enumeration per anchor.
//! - [`losses`]: semi-contrastive, intra-modal and inter-modal supervised
//!   contrastive losses with refinement terms, the prediction loss, and the
//!   baseline metric-learning losses.
//! - [`pipeline`]: encoders, normalization, fusion and the regression head.
//! - [`data`], [`train`], [`metrics`]: synthetic data, Adam training and
//!   evaluation.

pub mod data;
pub mod diff;
pub mod gradcheck;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pairs;
pub mod pipeline;
pub mod train;

pub use diff::{Graph, Matrix, NodeId};
pub use model::{
    binarize, default_hyperparams, BinaryClass, EmbeddingMatrix, HyperParams, MiniBatch, Modality,
    SentimentLabel,
};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite value in {term}")]
    NonFinite { term: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
