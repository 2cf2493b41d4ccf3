//! Estimation procedures for ordinal sentiment classifiers on time-ordered data.
//!
//! The crate covers the whole pipeline: corpus loading and partitioning,
//! delta TF-IDF features, the two-plane SVM classifier, agreement metrics,
//! cross-validation and sequential resampling plans, and the error analysis.

pub mod classify;
pub mod corpus;
pub mod features;
pub mod metrics;
pub mod resample;
pub mod seed;
pub mod stats;
pub mod synthetic;
pub mod config;
pub mod pipeline;
