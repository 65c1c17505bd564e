//! Command-line front end: TOML configuration, subcommand pipelines and
//! exit-code mapping.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
