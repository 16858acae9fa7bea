//! Experiment runner for the cure-simulation PINN methods: configuration,
//! error metrics, orchestration and replay.

pub mod config;
pub mod error;
pub mod metrics;
pub mod run;

pub use config::{ExperimentConfig, Method};
pub use error::{BenchError, Result};
pub use metrics::{max_abs_error, relative_l2, FieldErrors};
pub use run::{replay, run, MetricsReport};
