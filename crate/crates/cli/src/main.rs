//! `lipshadow`: atlas verification, shadowing runs, oracle sweeps and the
//! reproduction suite for the example map.
//!
//! Exit codes: 0 when every check passes, 1 when a claim fails, 2 on
//! malformed input or usage errors.

mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use input::{Failure, EXIT_USAGE};

#[derive(Debug, Parser, Serialize)]
#[command(name = "lipshadow", version, about = "Lipschitz shadowing workbench for piecewise-affine maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 2017)]
    pub seed: u64,
    /// Output directory for reports and tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the machine-readable report on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Command {
    /// Check the block conditions of an atlas against a map.
    VerifyAtlas(VerifyAtlasArgs),
    /// Shadow a pseudotrajectory read from CSV.
    Shadow(ShadowArgs),
    /// Optimal shadowing distance of a pseudotrajectory.
    Oracle(OracleArgs),
    /// Empirical Lipschitz shadowing constant over generated trials.
    Sweep(SweepArgs),
    /// Generate pseudotrajectories.
    Generate(GenerateArgs),
    /// Run every checkable claim about the example maps.
    #[command(name = "reproduce-paper")]
    #[serde(rename = "reproduce-paper")]
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct MapArgs {
    /// `f0`, `f`, or a JSON map file.
    #[arg(long, default_value = "f0")]
    pub map: String,
    /// JSON atlas file; `f0` has a built-in one.
    #[arg(long)]
    pub atlas: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyAtlasArgs {
    #[command(flatten)]
    pub map: MapArgs,
    /// Defect for the transition check (defaults to the threshold `d0`).
    #[arg(long)]
    pub d: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ShadowArgs {
    #[command(flatten)]
    pub map: MapArgs,
    /// Pseudotrajectory CSV with `k,x_k` rows.
    pub input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub map: MapArgs,
    pub input: PathBuf,
    /// Search interval `lo,hi`; defaults to a ball of radius `factor·d` around `x_0`.
    #[arg(long)]
    pub search: Option<String>,
    /// Radius of the default search ball in units of `d`.
    #[arg(long, default_value = "109")]
    pub factor: String,
    /// Resolution of cores left unresolved near accumulating breakpoints.
    #[arg(long, default_value_t = 6)]
    pub core_bits: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub map: MapArgs,
    /// Defects to sweep, comma separated; defaults to `2^-10, 2^-12, ..., 2^-20`
    /// capped at the map's threshold.
    #[arg(long, value_delimiter = ',')]
    pub d: Vec<String>,
    /// Trials per defect.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Steps per trajectory.
    #[arg(long = "horizon", short = 'T', default_value_t = 40)]
    pub horizon: usize,
    /// Ratio `ρ*/d` above which a trial counts as a violation.
    #[arg(long)]
    pub bound: Option<String>,
    /// Radius of the oracle search ball in units of `d`.
    #[arg(long)]
    pub factor: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Perturbed,
    Crossing,
    AdversarialDrift,
    Constant,
    Backward,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// JSON file with one generator spec or an array of them.
    #[arg(long, conflicts_with_all = ["kind", "x0", "d", "lead", "tail"])]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "f0")]
    pub map: String,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Start point (end point for `backward`).
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long = "horizon", short = 'T', default_value_t = 40)]
    pub horizon: usize,
    /// Noise level.
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long)]
    pub lead: Option<usize>,
    #[arg(long)]
    pub tail: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReproduceArgs {
    /// Smaller trial counts.
    #[arg(long)]
    pub quick: bool,
    /// Do not fail items that exceed their time limit.
    #[arg(long)]
    pub no_time_limits: bool,
    /// Replace an expected value, `NAME=VALUE` (harness self-test).
    #[arg(long = "expect", hide = true)]
    pub overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            return report_failure(&cli, Failure::usage(format!("--jobs: {e}")));
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => report_failure(&cli, failure),
    }
}

fn report_failure(cli: &Cli, failure: Failure) -> ExitCode {
    if cli.json {
        let doc = serde_json::json!({ "config": cli, "error": failure.to_json() });
        println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
    }
    eprintln!("error: {failure}");
    ExitCode::from(failure.code)
}
