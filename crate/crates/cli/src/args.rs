use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hashalloc::Strategy;

#[derive(Debug, Parser)]
#[command(
    name = "hashalloc",
    version,
    about = "Balanced-allocation experiments: double hashing vs random choices"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run placement trials and report load fractions against the fluid limit
    Simulate(SimulateArgs),
    /// Solve the fluid-limit ODEs and write the grid as CSV
    Fluid(FluidArgs),
    /// Run the double-hashing coupling with a dominance-checked shadow table
    Couple(CoupleArgs),
    /// Audit exact hash-pair counts against their expectation
    AuditEta(AuditEtaArgs),
    /// Compare two strategies level by level
    Compare(CompareArgs),
    /// Maximum load across table sizes
    Maxload(MaxloadArgs),
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    hashalloc::parse::parse_strategy(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone)]
pub struct NList(pub Vec<u64>);

fn parse_n_list(s: &str) -> Result<NList, String> {
    hashalloc::parse::parse_n_list(s)
        .map(NList)
        .map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of bins (must be prime)
    #[arg(long)]
    pub n: u64,
    /// Choices per ball
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Balls per bin; floor(T * n) balls are placed
    #[arg(long = "T", default_value_t = 1.0)]
    pub t: f64,
    /// single | random | double | modified
    #[arg(long, default_value = "double", value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 10)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for independent trials
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// JSON report path (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional per-level CSV table
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FluidArgs {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t: f64,
    /// Highest load level tracked
    #[arg(long, default_value_t = 20)]
    pub imax: usize,
    /// RK4 step size
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    /// Add the modified process's uniform-placement drift for this n
    #[arg(long = "perturb-n")]
    pub perturb_n: Option<u64>,
    /// CSV path (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoupleArgs {
    /// Number of bins (must be prime; each step costs O(n^2 d), keep n <= ~500)
    #[arg(long)]
    pub n: u64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t: f64,
    /// Correction weight delta [default: n^-0.01]
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Balls to throw [default: floor((1 + 2 delta) floor(T n))]
    #[arg(long = "total-balls")]
    pub total_balls: Option<u64>,
    /// Continue past steps where some bin has eta > (1 + delta) p_j
    #[arg(long = "force-pass")]
    pub force_pass: bool,
    /// Write the per-step trace as JSON lines
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// JSON summary path (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditEtaArgs {
    /// Number of bins (must be prime)
    #[arg(long)]
    pub n: u64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Rank permutations to average over
    #[arg(long, default_value_t = 10_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also scan a modified-process run for bins with eta > (1 + delta) p_j
    #[arg(long = "scan-delta")]
    pub scan_delta: Option<f64>,
    #[arg(long = "scan-trials", default_value_t = 10)]
    pub scan_trials: u64,
    #[arg(long = "scan-T", default_value_t = 1.0)]
    pub scan_t: f64,
    /// JSON path for the scan (standard output when omitted)
    #[arg(long = "scan-out")]
    pub scan_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Number of bins (must be prime)
    #[arg(long)]
    pub n: u64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t: f64,
    #[arg(long = "strategy-a", default_value = "double", value_parser = parse_strategy)]
    pub strategy_a: Strategy,
    #[arg(long = "strategy-b", default_value = "random", value_parser = parse_strategy)]
    pub strategy_b: Strategy,
    #[arg(long, default_value_t = 10)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for side b [default: seed + 1, so a strategy compared with itself is a null run]
    #[arg(long = "seed-b")]
    pub seed_b: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// JSON report path (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional per-level CSV table
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaxloadArgs {
    /// Comma-separated primes, e.g. 100003,1000003
    #[arg(long = "n-list", value_parser = parse_n_list)]
    pub n_list: NList,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 10)]
    pub trials: u64,
    #[arg(long, default_value = "double", value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// JSON report path (standard output when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional plot-data CSV (n against max load)
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
