//! Benchmark harness for distributed GP regression: synthetic data,
//! CSV ingestion, metrics and experiment orchestration.

pub mod config;
pub mod error;
pub mod experiment;
pub mod functions;
pub mod ingest;
pub mod metrics;

pub use config::{ExperimentConfig, Task};
pub use error::{BenchError, Result};
pub use experiment::{run_experiment, ExperimentOutput, MetricRow};
