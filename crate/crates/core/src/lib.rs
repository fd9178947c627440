//! Rationale-based multi-property molecule generation.

pub mod chemgraph;
pub mod error;
pub mod extract;
pub mod fingerprint;
pub mod forest;
pub mod genmodel;
pub mod hashing;
pub mod merge;
pub mod metrics;
pub mod numsub;
pub mod rationale;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
