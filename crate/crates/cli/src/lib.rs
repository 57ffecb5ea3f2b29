//! Command-line front end, file formats and experiment harness.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod io;

pub use cli::{run, Cli};
pub use error::{CliError, CliResult};
