//! Generated-feedback-enhanced fake news detection.
//!
//! The pipeline: role-play an LLM over a 30-cell demographic grid to
//! generate comments for each news item, encode those comments externally,
//! turn them into per-view group means and cross-group divergence features,
//! aggregate with parameter-free intra-view attention and a learnable
//! inter-view gate, and classify veracity with a small MLP head.
//!
//! Modules map onto the pipeline stages:
//! - [`dataset`]: corpus loading, splitting, comment truncation
//! - [`profiles`]: the demographic grid and prompt rendering/parsing
//! - [`llm`]: provider-agnostic chat gateway with caching and replay
//! - [`embedding`]: embedding table ingestion and the softmax transform
//! - [`feedback`]: group means, pairwise divergences, diversity vectors
//! - [`model`]: forward/backward/training for the aggregation head
//! - [`metrics`]: Acc / AUC / macro-F1 evaluation

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod feedback;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod profiles;

pub use error::{Error, Result};
