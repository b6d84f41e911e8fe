//! Experiment driver for the branching Brownian motion laboratory.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::run;
pub use config::ExperimentConfig;
pub use error::CliError;

/// Resolve the configuration of `command` and run it.
pub fn execute(
    command: &str,
    file: Option<&std::path::Path>,
    overrides: &[(String, String)],
) -> Result<String, CliError> {
    let defaults = commands::defaults(command)
        .ok_or_else(|| CliError::Usage(format!("unknown command {command:?}")))?;
    let cfg = ExperimentConfig::resolve(command, defaults, file, overrides)?;
    run(&cfg)
}
