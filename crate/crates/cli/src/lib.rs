//! Batch front end of tomoforge: raw+JSON file formats, reconstruction plans,
//! CSV reports, slice export and the benchmark scenarios.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod error;
pub mod export;
pub mod io;
pub mod plan;
pub mod report;

pub use error::{CliError, Result};

use std::ffi::OsString;

use cli::Cli;

/// Runs a parsed command line and returns the process exit code. `setup`
/// sees the arguments before the command runs (the binary installs its
/// logger there).
pub fn finish(parsed: std::result::Result<Cli, clap::Error>, setup: impl FnOnce(&Cli)) -> i32 {
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // --help and --version are not errors
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    setup(&cli);
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// In-process equivalent of running the binary with `args` (program name first).
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::Parser;
    finish(Cli::try_parse_from(args), |_| ())
}
