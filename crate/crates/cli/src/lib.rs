//! Command-line front end: subcommands wrapping each core module and a
//! config-driven end-to-end pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::ffi::OsString;

use clap::Parser;

use crate::commands::{run_command, Command};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "xsensor", version, about = "Cross-sensor raster alignment, resampling and evaluation")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are written to stderr as a JSON object.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                print!("{e}");
                return 0;
            }
            let err = CliError::config(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    if let Some(n) = cli.threads {
        if n == 0 {
            let err = CliError::config("--threads must be positive");
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            let err = CliError::Internal(format!("cannot configure thread pool: {e}"));
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    }
    match run_command(cli.command, threads) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
