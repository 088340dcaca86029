//! Command-line front end: experiment configs, dataset and checkpoint files,
//! training runs and comparisons of the plant, its nominal model and the
//! learned lifted model.

pub mod checkpoint;
pub mod commands;
pub mod compare;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod manifest;
pub mod numfmt;

pub use checkpoint::{load_model, load_model_for, save_model, Checkpoint};
pub use commands::{run_command, run_with};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK};
