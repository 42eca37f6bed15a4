//! Command-line flags, the optional JSON config file, and their merge.
//!
//! Precedence is flag, then config file, then built-in default.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "mrkc", version, about = "RKC and multirate RKC experiments: convergence, stability scans, speed-up model")]
pub struct Cli {
    /// JSON file with default values for any flag (keys use snake_case).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the CSV here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the summary as a JSON object.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed of the power-method start vector.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Outer damping epsilon (default 0.05).
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Error against a reference solution for a list of step sizes.
    Convergence(ConvergenceArgs),
    /// Stability scans of the scalar, 2x2 and splitting models.
    Scan(ScanArgs),
    /// Tabulate the cost model speed-ups.
    Speedup(SpeedupArgs),
    /// Integrate one problem and write per-step stage records.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Rkc,
    Mrkc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Strict,
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    Scalar,
    PhiWindow,
    PhiContinuous,
    TwoByTwo,
    Splitting,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// robertson, multirate, heat or intdiff.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Defaults to relaxed for heat and strict otherwise.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Fast coefficient of the multirate test equation.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Slow coefficient of the multirate test equation.
    #[arg(long, allow_hyphen_values = true)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Comma-separated step sizes.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub tau: Option<Vec<f64>>,
    /// rk4, rk4:<tau>, rkc:<tau> or exact.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Also write the trajectory (t, y_0, y_1, ...) here.
    #[arg(long)]
    pub states: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(value_enum)]
    pub kind: Option<ScanKind>,
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Inner step; defaults to the strict lower bound.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Multiplier on the strict inner step (two-by-two scan).
    #[arg(long)]
    pub eta_factor: Option<f64>,
    /// Coupling as a fraction of sqrt(lambda zeta) (two-by-two scan).
    #[arg(long)]
    pub sigma_factor: Option<f64>,
    /// Window parameter of the phi-window scan (negative).
    #[arg(long, allow_hyphen_values = true)]
    pub w: Option<f64>,
    /// Slow coefficient of the phi-continuous scan (negative).
    #[arg(long, allow_hyphen_values = true)]
    pub zeta: Option<f64>,
    /// Grid points per axis.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpeedupArgs {
    /// Number of c_F values in [0, 1].
    #[arg(long)]
    pub cf_points: Option<usize>,
    /// Comma-separated rho_F / rho_S ratios.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Contents of the `--config` file. Every key is optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub problem: Option<String>,
    pub method: Option<MethodArg>,
    pub mode: Option<ModeArg>,
    pub t_end: Option<f64>,
    pub lambda: Option<f64>,
    pub zeta: Option<f64>,
    pub tau: Option<OneOrMany>,
    pub reference: Option<String>,
    pub scan: Option<ScanKind>,
    pub s: Option<usize>,
    pub m: Option<usize>,
    pub eta: Option<f64>,
    pub eta_factor: Option<f64>,
    pub sigma_factor: Option<f64>,
    pub w: Option<f64>,
    pub points: Option<usize>,
    pub cf_points: Option<usize>,
    pub ratios: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
