//! Multi-term, multi-task stacked ensembles for affect recognition from
//! frame-level feature tables.
//!
//! Pipeline: standardize frame features ([`data`]), reduce deep embeddings
//! ([`decomposition`]), window every video at several time scales
//! ([`windowing`]), optionally rebalance ([`balancing`]), then train
//! boosted-tree stacks ([`learner`], [`ensemble`]) and score them
//! ([`metrics`]).

pub mod balancing;
pub mod config;
pub mod data;
pub mod decomposition;
pub mod ensemble;
pub mod error;
pub mod fmt;
pub mod learner;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
pub use matrix::Matrix;
