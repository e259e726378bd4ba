//! Context-aware multi-label zero-shot attribute prediction.
//!
//! Novel attributes are scored by marginalising the confidences of a bank of
//! known-attribute classifiers through a novel-given-known conditional
//! matrix:
//!
//! ```text
//! p(novel_q | x) = sum_p p(novel_q | known_p) * p(known_p | x)
//! ```
//!
//! The conditional comes either from a temperature softmax over word-vector
//! inner products ([`context::text_conditional`]) or from a bilinear map
//! trained to regress log visual co-occurrence counts from word-vector pairs
//! ([`context::fit_bilinear`], [`context::cooc_conditional`]).
//!
//! The crate also carries the comparison models (WVE, ESZSL, ExDAP, DMP),
//! the multi-label metric suite, a seeded synthetic data generator and an
//! experiment driver that ties all of it together.

pub mod baselines;
pub mod context;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod known_model;
mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod zsl;

pub use domain::{
    validate_aligned, AnnotationMatrix, AttributeEmbeddings, AttributeVocabulary,
    ConditionalMatrix, DatasetSplit, FeatureMatrix, ScoreMatrix,
};
pub use error::{Error, Result};
pub use nalgebra;
