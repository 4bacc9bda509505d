//! Task generation, experiment runner, verification battery and command-line
//! front end for `metalqr`.

pub mod config;
pub mod format;
pub mod run;
pub mod taskgen;
pub mod verify;

use std::fmt;
use std::path::Path;

/// Errors surfaced by the command-line tool, each with its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent input; exit status 2.
    Input(String),
    /// Numerical failure during a run; exit status 1.
    Run(metalqr::Error),
    /// File-system failure; exit status 1.
    Io(String),
    /// Failed verification properties; exit status 1.
    Verify(Vec<String>),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Run(e) => write!(f, "run failed: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Verify(names) => write!(f, "failed properties: {}", names.join(", ")),
        }
    }
}

impl std::error::Error for CliError {}

/// Variable selecting the worker-thread count.
pub const THREADS_ENV: &str = "METALQR_THREADS";

/// Configures the global worker pool from [`THREADS_ENV`] (default: all cores).
pub fn init_thread_pool() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV}: expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Input(format!("{THREADS_ENV}: {e}")))
}
