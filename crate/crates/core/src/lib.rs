//! Data synthesis pipeline for long-horizon search agents.

pub mod agent;
pub mod client;
pub mod dataset;
pub mod eval;
pub mod filter;
pub mod graph;
pub mod prompts;
pub mod stats;
pub mod synth;
pub mod text;
pub mod tools;

/// Statistics at double precision.
pub type StatsSummary = stats::StatsSummary<f64>;
pub type ComparisonTable = stats::ComparisonTable<f64>;
