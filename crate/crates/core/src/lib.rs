//! Tools for measuring and closing the modality gap between paired text and
//! image embeddings.
//!
//! - [`embedstore`]: the `CLSE` corpus container and row normalization
//! - [`geometry`]: paired/unpaired cosine statistics, recall@k
//! - [`adapters`]: Gaussian noise, constant shifts, least-squares linear maps,
//!   structured covariance noise, and pipelines of those
//! - [`analysis`]: difference-vector PCA and correlations, shift sensitivity sweeps
//! - [`transferlab`]: synthetic corpora and train-on-text / test-on-image experiments
//! - [`promptgen`]: keyword sampling and prompt assembly for synthetic captions

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapters;
pub mod analysis;
pub mod embedstore;
pub mod error;
pub mod geometry;
pub mod promptgen;
pub mod rng;
pub mod transferlab;
pub mod vecmath;

pub use adapters::{Adapter, AdapterPipeline};
pub use embedstore::{EmbeddingMatrix, PairedCorpus};
pub use error::{GapError, Result, Side};
pub use geometry::GapReport;
pub use transferlab::{SyntheticCorpusSpec, TrainConfig, TransferReport};
