//! Command-line harness around the `relgraph` library.

pub mod commands;
pub mod data;
pub mod dot;
pub mod error;
pub mod manifest;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
