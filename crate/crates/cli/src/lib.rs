//! Command-line front end: scenario loading, runs, paired comparisons, gain
//! checks and phase-plane bundles.

mod args;
mod commands;

pub use args::{Cli, Command, Common, Emit};
pub use commands::{execute, Failure};

use clap::Parser;

/// Parses `argv` and runs the command, returning the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { commands::EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}
