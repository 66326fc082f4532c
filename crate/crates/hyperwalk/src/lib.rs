//! Temporal-hypergraph modeling of multivariate time-series cohorts and
//! walk-based neural detection of anomalous co-activations.
//!
//! The pipeline: slide windows over each subject's signal matrix, connect
//! mutually top-percentile-correlated nodes into timestamped hyperedges,
//! sample time-biased backward walks over the resulting temporal hypergraph,
//! encode walk sets with a permutation-invariant mixer stack, and train the
//! scorer contrastively on healthy subjects only so that held-out corrupted
//! hyperedges score high.

pub mod error;
pub mod encoder;
pub mod hypergraph;
pub mod ingest;
pub mod rng;
pub mod tensor;
pub mod walker;

pub use error::{Error, Result};
