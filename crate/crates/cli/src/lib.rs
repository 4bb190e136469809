//! Command-line front end for delayed-consensus certification.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::ExitCode;
pub use config::{Config, ConfigError, Solver};

#[derive(Debug, Parser)]
#[command(
    name = "dcl",
    version,
    about = "Consensus certificates for multi-agent systems with time-varying delays"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for simulation sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Use the merged Schur layout instead of the per-interval one.
    #[arg(long, global = true)]
    pub merged_schur: bool,
    /// Solver id, overriding the config: auto, builtin or external:<path>.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    /// Write the problem at the configured bounds in SDPA sparse format.
    #[arg(long, global = true)]
    pub export_sdpa: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide the criterion at the configured delay bounds.
    Check,
    /// Bisect for the largest certified delay bound.
    Maxdelay {
        /// Write every probe to this CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Integrate the delayed network and report the consensus metric.
    Simulate {
        /// Trajectory CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Consensus metric CSV.
        #[arg(long)]
        metric: Option<PathBuf>,
    },
    /// Check the integral inequality on random draws.
    VerifyLemma {
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip the sign of one coefficient table entry.
        #[arg(long, hide = true)]
        tamper: bool,
    },
}

/// Parses `args` and runs the command, writing reports to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => commands::run(&cli, out, err) as i32,
        Err(e) => {
            let _ = write!(err, "{e}");
            if e.use_stderr() {
                ExitCode::Config as i32
            } else {
                ExitCode::Ok as i32
            }
        }
    }
}
