//! `afdplan`: command-line front end for the AFD capacity-planning analyses.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 infeasible scenario,
//! 3 I/O error.

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use afdplan_core::{ConfigError, Error};

#[derive(Debug, Parser)]
#[command(name = "afdplan", version, about = "Capacity planning for attention-FFN disaggregated MoE inference")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run-batch latency and per-stage budget from the SLO.
    Budget(BudgetArgs),
    /// Arithmetic intensity and bandwidth regime versus FFN node count.
    Intensity(SweepArgs),
    /// Upper-bound FFN HFU versus FFN node count.
    Hfu(HfuArgs),
    /// Communication-bound HFU ceiling.
    Cap(CapArgs),
    /// Compare the AFD ceiling with the large-scale EP reference HFU.
    Compare(CapArgs),
    /// Imbalance penalties for AFD and large-scale EP.
    Penalty(PenaltyArgs),
    /// Simulate a micro-batch overlap pipeline.
    Simulate(SimulateArgs),
    /// Aggregate report for one model/hardware pair.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output format.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Suppress warnings on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Debug, Args)]
pub struct Target {
    /// Model preset name or path to a model config file.
    #[arg(long)]
    model: String,
    /// Hardware preset name or path to a hardware config file.
    #[arg(long)]
    hardware: String,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario config file; individual flags override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Time per output token target, milliseconds.
    #[arg(long)]
    slo_ms: Option<f64>,
    /// Average accepted tokens per step.
    #[arg(long)]
    l_accept: Option<f64>,
    /// Gap budget, milliseconds.
    #[arg(long)]
    t_gap_ms: Option<f64>,
    /// Batch-overlap cardinality.
    #[arg(long)]
    n_bo: Option<u32>,
    /// Achievable fraction of peak GEMM throughput.
    #[arg(long)]
    gemm_efficiency: Option<f64>,
    /// HFU attained by large-scale EP, for comparisons.
    #[arg(long)]
    ep_reference: Option<f64>,
    /// Share of HBM usable for expert weights.
    #[arg(long)]
    memory_reserve: Option<f64>,
    /// Routing metadata bytes per token.
    #[arg(long)]
    extra_bytes_per_token: Option<f64>,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// FFN node range `A:B`, inclusive.
    #[arg(long, default_value = "1:64")]
    nf_range: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct HfuArgs {
    /// Comma-separated model presets or config paths.
    #[arg(long, value_delimiter = ',', required = true)]
    model: Vec<String>,
    /// Comma-separated hardware presets or config paths.
    #[arg(long, value_delimiter = ',', required = true)]
    hardware: Vec<String>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "1:64")]
    nf_range: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap summary file. Defaults to `<out>.cap.json` when `--out` is set.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct CapArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct PenaltyArgs {
    /// FFN node counts.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
    nf: Vec<u32>,
    /// Balancedness values.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.75,0.8,0.85")]
    sigma: Vec<f64>,
    /// `A:B:step` grid for lambda = n_a / n_f.
    #[arg(long, default_value = "1:5:0.05")]
    lambda_range: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Overlap mode: nbo, 2bo or 3bo.
    #[arg(long, default_value = "3bo")]
    mode: String,
    #[arg(long, default_value_t = 58)]
    layers: u32,
    #[arg(long)]
    ta_us: f64,
    #[arg(long)]
    tf_us: f64,
    #[arg(long)]
    tdispatch_us: f64,
    #[arg(long)]
    tcombine_us: f64,
    /// `kind:magnitude` with kind `none`, `uniform` or `lognormal`.
    #[arg(long, default_value = "none")]
    jitter: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    /// SLO-derived budget to check against; the tightest budget the
    /// timings admit is used otherwise.
    #[arg(long)]
    slo_ms: Option<f64>,
    #[arg(long)]
    l_accept: Option<f64>,
    #[arg(long)]
    t_gap_ms: Option<f64>,
    /// Summary output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace CSV output file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "1:64")]
    nf_range: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Infeasible(String),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Io(..) => 3,
        }
    }

    pub fn io(path: Option<&Path>, err: std::io::Error) -> Self {
        CliError::Io(path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf), err)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Infeasible(m) => write!(f, "infeasible scenario: {m}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => CliError::Config(c),
            Error::NonPositiveBudget { .. } => CliError::Infeasible(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Budget(a) => commands::budget(&a.target, &a.scenario, &a.common),
        Command::Intensity(a) => commands::intensity(&a),
        Command::Hfu(a) => commands::hfu(&a),
        Command::Cap(a) => commands::cap(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Penalty(a) => commands::penalty(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afdplan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
