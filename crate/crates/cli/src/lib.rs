//! Experiment runner for continuous convolutional networks: training and
//! evaluation loops, kernel export and the convolution benchmark. The `ccnn`
//! binary is a thin command-line layer over these functions.

pub mod bench;
pub mod config;
pub mod error;
pub mod export;
pub mod tasks;
pub mod train;

pub use config::{ExperimentConfig, Representation, Task};
pub use error::{CliError, CliResult};
pub use tasks::EvalOverride;
pub use train::{run_eval, run_train, Metrics, RunRecord};
