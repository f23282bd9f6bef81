//! File formats, subcommands and the Monte Carlo GOE oracle for `freespec`.

pub mod commands;
pub mod error;
pub mod format;
pub mod oracle;

pub use commands::{run, Cli, Command, Flags, Outcome};
pub use error::{CliError, CliResult};
