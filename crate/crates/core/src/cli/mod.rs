//! Command line runner: flags and config files are merged into an
//! [`ExperimentConfig`], executed on a sized worker pool, and every run
//! leaves its CSV tables, plot data and a manifest in the output directory.

mod config;
mod run;

pub use config::{
    parse_eps, parse_grid, AlphaSetting, ConfigError, ExperimentConfig, ManifestSection, OutputEntry, Params,
    RunSection, Subcommand,
};
pub use run::{execute, RunSummary};

use crate::error::LabError;
use clap::{Args, Parser};
use std::ffi::OsString;
use std::path::PathBuf;

/// Environment variable consulted when neither flag nor file sets a seed.
pub const SEED_ENV: &str = "SLLN_LAB_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Lab(e) => e.exit_code(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "slln-lab", version, about = "Strong-law and complete-convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Check L(x) L~(x L(x)) -> 1 on a grid.
    Conjugate(Flags),
    /// Check x L'(x) / L(x) -> 0 on a grid.
    Galambos(Flags),
    /// Generate one sample path.
    Generate(Flags),
    /// Variance-domination ratios over (k, l, transform) cells.
    VarRatio(Flags),
    /// Phi-mixing coefficients of a Markov model.
    Phi(Flags),
    /// E g(|X|) through the tail integral.
    Moment(Flags),
    /// Monte Carlo Baum-Katz series.
    BaumKatz(Flags),
    /// Normalized partial-sum trajectories.
    Slln(Flags),
    /// Dyadic truncation inequality on generated paths.
    DecompositionCheck(Flags),
    /// Three-point counterexample family.
    Counterexample(Flags),
    /// Run whatever subcommand a config or manifest file names.
    Run(Flags),
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    /// `auto` (1/p) or a number.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long = "L")]
    l: Option<String>,
    /// Comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    eps: Option<String>,
    #[arg(long = "K")]
    k: Option<u32>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// `lo:hi:count`
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    tail: Option<String>,
    #[arg(long)]
    weight: Option<String>,
}

impl Flags {
    fn params(&self) -> Result<Params, ConfigError> {
        Ok(Params {
            model: self.model.clone(),
            p: self.p,
            alpha: self.alpha.as_deref().map(AlphaSetting::parse).transpose()?,
            l: self.l.clone(),
            eps: self.eps.as_deref().map(parse_eps).transpose()?,
            k: self.k,
            n: self.n,
            reps: self.reps,
            grid: self.grid.clone(),
            tol: self.tol,
            tail: self.tail.clone(),
            weight: self.weight.clone(),
        })
    }
}

fn read_config(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

fn env_seed() -> Result<Option<u64>, ConfigError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ConfigError::new("seed", format!("{SEED_ENV}=`{v}` is not a nonnegative integer"))),
        Err(_) => Ok(None),
    }
}

/// Merges file, flags and environment into the config to execute.
fn assemble(sub: Option<Subcommand>, flags: &Flags) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => read_config(path)?,
        None => ExperimentConfig::default(),
    };
    // A manifest read back as a config only contributes its settings.
    cfg.manifest = None;
    let sub = match (sub, cfg.run.subcommand) {
        (Some(s), Some(f)) if s != f => {
            return Err(ConfigError::new(
                "subcommand",
                format!("config file is for `{f}` but `{s}` was requested"),
            )
            .into())
        }
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => {
            return Err(ConfigError::new("subcommand", "`run` needs a config file naming the subcommand").into())
        }
    };
    cfg.run.subcommand = Some(sub);
    cfg.params.overlay(flags.params()?);
    if flags.seed.is_some() {
        cfg.run.seed = flags.seed;
    }
    if cfg.run.seed.is_none() {
        cfg.run.seed = env_seed()?;
    }
    if let Some(w) = flags.workers {
        cfg.run.workers = Some(w);
    }
    if let Some(out) = &flags.out {
        cfg.run.out = Some(out.display().to_string());
    }
    Ok(cfg)
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (sub, flags) = match &cli.command {
        Command::Conjugate(f) => (Some(Subcommand::Conjugate), f),
        Command::Galambos(f) => (Some(Subcommand::Galambos), f),
        Command::Generate(f) => (Some(Subcommand::Generate), f),
        Command::VarRatio(f) => (Some(Subcommand::VarRatio), f),
        Command::Phi(f) => (Some(Subcommand::Phi), f),
        Command::Moment(f) => (Some(Subcommand::Moment), f),
        Command::BaumKatz(f) => (Some(Subcommand::BaumKatz), f),
        Command::Slln(f) => (Some(Subcommand::Slln), f),
        Command::DecompositionCheck(f) => (Some(Subcommand::DecompositionCheck), f),
        Command::Counterexample(f) => (Some(Subcommand::Counterexample), f),
        Command::Run(f) => (None, f),
    };
    match assemble(sub, flags).and_then(|cfg| execute(&cfg)) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("slln-lab: {e}");
            e.exit_code()
        }
    }
}
