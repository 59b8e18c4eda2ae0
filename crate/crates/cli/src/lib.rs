//! Command-line front end: configuration files, experiment runs, synthetic
//! data, gradient checks and report tables.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_gradcheck, cmd_report, cmd_run, cmd_synth, run_experiment, RunSummary, SynthManifest,
};
pub use config::{Experiment, ExperimentConfig, ExperimentData, Mode};

/// Failure of a command, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files.
    #[error("{0}")]
    Config(String),
    /// Anything that went wrong after validation.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
