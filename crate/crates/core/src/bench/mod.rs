//! Experiment harness: datasets, the plaintext baseline, metrics and
//! network estimates.

pub mod data;
pub mod experiment;
pub mod lloyd;
pub mod metrics;
pub mod network;
