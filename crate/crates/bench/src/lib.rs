//! Experiment driver behind the `nni` tool: configuration, metric sweeps,
//! resumable result caching and report output.

pub mod cache;
pub mod compare;
pub mod config;
pub mod experiment;
pub mod report;

pub use compare::{compare, ComparisonReport};
pub use config::{DatasetSource, ExperimentConfig, IndexKind};
pub use experiment::{run, RunOutcome};
pub use report::{Format, MetricsReport};

/// Crate version plus `git describe` of the build, carried in every report.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("NNI_GIT_DESCRIBE"));

/// The JSON schema every report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../../../schema/metrics.schema.json");
