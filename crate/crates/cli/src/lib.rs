//! Command-line front end for the flowam workbench.

mod commands;
mod error;
pub mod experiments;
pub mod render;

pub use commands::{run, Cli, Command};
pub use error::CliError;
