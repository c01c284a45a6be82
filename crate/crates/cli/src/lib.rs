//! Command-line surface of the kac-turing toolkit: configuration, subcommands
//! and output files.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;

pub use commands::{execute, Command, RunOutput};
pub use config::RunConfig;
pub use error::CliError;
