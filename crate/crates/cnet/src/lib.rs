//! Constructive neural networks with incremental feature learning.
//!
//! The library grows a network's hidden topology at runtime: unit blocks are
//! appended one at a time, previously learned weights are frozen, and growth
//! stops once a newly trained unit no longer improves the convergence metric.
//! Around that core sit the dataset preparation pipeline (dedup, time-based
//! chunking, stratified splits, SMOTE, range normalization) and the
//! evaluation harness (confusion metrics, multi-run averaging, model
//! comparison reports) used to validate the method on fraud-style data.

// index loops mirror the w[r][c] math they implement, and the multi-model
// return tuples are one-off experiment results not worth naming
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod datapipe;
pub mod error;
pub mod evalkit;
pub mod growth;
pub mod netgraph;
pub mod numerics;
pub mod synth;
pub mod traincore;

pub use error::{Error, Result};
