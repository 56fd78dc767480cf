//! Command-line front end: configs in, JSON and CSV artifacts out.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use qednet::ctmc::SimError;
use qednet::diffusion::DiffusionError;
use qednet::verify::VerifyError;

/// Exit code for configuration and validation errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for errors raised while simulating or fitting.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{key}: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Runtime(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Runtime(_) | CliError::Io { .. } => EXIT_RUNTIME,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => CliError::Config {
                key: "run".into(),
                message: m.to_string(),
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Model(m) => CliError::Config {
                key: "run".into(),
                message: m.to_string(),
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Sim(s) => s.into(),
            VerifyError::Diffusion(d) => d.into(),
            VerifyError::Model(m) => CliError::Config {
                key: "network".into(),
                message: m.to_string(),
            },
            VerifyError::Fluid(f) => CliError::Config {
                key: "network".into(),
                message: f.to_string(),
            },
            VerifyError::Policy(p) => CliError::Config {
                key: "policy".into(),
                message: p.to_string(),
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qednet", version, about = "Many-server network experiments in the Halfin-Whitt regime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set run.n_list=[50,100]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Directory for the JSON report and CSV plot data.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fluid solution and diffusion drift matrices.
    Fluid,
    /// Evaluate Psi at `[psi]` alpha and beta, or at the fluid point.
    Psi,
    /// Simulate the n-th CTMC for each n and seed.
    SimulateCtmc,
    /// Simulate the limiting diffusion under the configured control.
    SimulateDiffusion,
    /// Fit a discrete Foster-Lyapunov certificate for each n.
    VerifyLyapunov,
    /// Moment-bound audit across the simulated traces.
    VerifyMoments,
    /// CTMC versus diffusion convergence experiment.
    Convergence,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fluid => "fluid",
            Command::Psi => "psi",
            Command::SimulateCtmc => "simulate-ctmc",
            Command::SimulateDiffusion => "simulate-diffusion",
            Command::VerifyLyapunov => "verify-lyapunov",
            Command::VerifyMoments => "verify-moments",
            Command::Convergence => "convergence",
        }
    }
}

/// Runs the command and writes artifacts; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(artifact) => {
            println!("{}", artifact.json);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<commands::Artifact, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config {
        key: "<config>".into(),
        message: "no config file given (use --config)".into(),
    })?;
    let resolved = config::load(path, &cli.overrides)?;
    let artifact = commands::run_command(cli.command, &resolved)?;
    if let Some(dir) = &cli.out {
        artifact.write(dir, cli.command.name())?;
    }
    Ok(artifact)
}
