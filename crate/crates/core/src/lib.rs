//! Independent component analysis of word embeddings.
//!
//! The pipeline loads word2vec text vectors, whitens them, runs symmetric
//! FastICA, and exposes the analyses used to interpret the resulting
//! components: dominant-word sets and one-sidedness, sign normalization,
//! cross-run stability, multiplicative feature combination, and the word
//! intruder test together with an HTTP service for collecting annotations.

pub mod analysis;
pub mod cli;
pub mod combiner;
pub mod embedding_io;
pub mod error;
pub mod fastica;
pub mod intruder;
mod linalg;
pub mod service;
pub mod stability;
pub mod whitening;

pub use analysis::{ComponentProfile, Direction};
pub use combiner::CombinationQuery;
pub use embedding_io::{EmbeddingMatrix, Vocabulary};
pub use error::{Error, Result};
pub use fastica::{Contrast, IcaConfig, IcaModel, IcaRun};
pub use intruder::{AnnotationRecord, IntruderItem, IntruderStats, SourceKind};
pub use stability::StabilityReport;
pub use whitening::WhiteningModel;
