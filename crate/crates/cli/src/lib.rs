//! Command-line driver: configuration loading and the pipeline subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::{run, Cli};
pub use config::{load_config, ModelKind, RunConfig};
pub use error::{CliError, ExitKind};
