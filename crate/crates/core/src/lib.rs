//! Feature-based hierarchical clustering of smart-meter load series.
//!
//! The pipeline turns raw half-hourly readings into seasonally differenced
//! log loads ([`preprocess`]), summarises each series by autocorrelations,
//! partial autocorrelations or quantile autocovariances ([`features`]),
//! builds a Euclidean dissimilarity matrix ([`dissimilarity`]) and clusters
//! it agglomeratively ([`hclust`]). [`evaluate`] and [`tree`] validate and
//! explain the resulting partitions.
//!
//! Data-parallel loops go through [`par`]; build without the default
//! `parallel` feature for a purely sequential library.

pub mod dissimilarity;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod hclust;
pub mod ingest;
pub mod par;
pub mod preprocess;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
