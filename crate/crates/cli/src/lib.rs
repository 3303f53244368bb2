//! Config-driven experiment runner for sieve exponential-family posteriors.
//!
//! Settings are resolved in this order, later sources winning: built-in
//! defaults, the JSON file given by `--config`, `SIEVE_BVM_*` environment
//! variables, then command-line flags.

pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sieve_bvm::Error> for CliError {
    fn from(e: sieve_bvm::Error) -> Self {
        use sieve_bvm::Error as E;
        match e {
            E::Io(_) | E::Parse(_) => CliError::Io(e.to_string()),
            E::Numerical(_) | E::IllConditioned { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sieve-bvm", version, about = "Posterior BvM experiments for sieve exponential-family density priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON configuration file (or a manifest from a previous run).
    #[arg(long, global = true, env = "SIEVE_BVM_CONFIG")]
    pub config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true, env = "SIEVE_BVM_SEED")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "SIEVE_BVM_OUT")]
    pub out: Option<PathBuf>,

    /// Worker threads for model- and replicate-level parallelism.
    #[arg(long, global = true, env = "SIEVE_BVM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Draw a dataset from the configured true density.
    Simulate,
    /// Fit the posterior over model sizes and write per-model diagnostics.
    Fit,
    /// Compare the posterior of √n(Ψ(f) − P_n ψ) with its Gaussian and mixture limits.
    Bvm,
    /// Tabulate contraction rates, model-size caps and ball radii.
    Rates,
    /// Bias series and bias floor for the slowly decaying truth.
    Counterexample,
    /// Frequentist coverage of credible intervals over replicated datasets.
    Coverage,
}

impl Cli {
    /// Merge the file configuration with flag and environment overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.resolve()?;
    if let Some(t) = cfg.threads {
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    commands::dispatch(cli.command, &cfg)
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sieve-bvm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
