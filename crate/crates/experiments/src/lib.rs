//! Config-driven experiments: runs the whittle-core learners on the
//! benchmark environments, logs checkpoint metrics as CSV, exports exact
//! oracles and aggregates replications into plot-ready series.

pub mod config;
pub mod error;
pub mod instance;
pub mod metrics;
pub mod oracle_export;
pub mod report;
pub mod runner;
pub mod spectrum;

pub use config::{Algorithm, Environment, ExperimentConfig};
pub use error::{ExperimentError, Result};
pub use metrics::{MetricName, MetricRow};
pub use runner::{run, Mode};
