//! The `anim3d` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal invariant violation.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::panic::{catch_unwind, AssertUnwindSafe};

use anim3d_core::error::CoreError;
use clap::Parser;

pub use commands::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Config(_) => EXIT_USAGE,
        CoreError::Numerics(_) => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match catch_unwind(AssertUnwindSafe(|| commands::execute(cli))) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("error: internal invariant violated");
            EXIT_INTERNAL
        }
    }
}
