//! Config-driven experiment runner for the `ktpfl` simulator.
//!
//! `ktpfl run <config.toml>` runs one experiment and writes its metrics,
//! summary and optional coefficient snapshots; `ktpfl compare` tabulates
//! finished runs.


// `!(x >= 0.0)` is deliberate: NaN must fail range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod compare;
pub mod config;
pub mod run;

pub use compare::{compare_runs, load_summary, Comparison};
pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use run::{run_experiment, Summary};

/// Process exit codes. Clap exits with 2 on malformed arguments.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const RUNTIME: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Usage(_) => exit::USAGE,
            CliError::Runtime(_) => exit::RUNTIME,
        }
    }
}

impl From<ktpfl_core::Error> for CliError {
    fn from(e: ktpfl_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
