//! `rbon` command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 verification failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rbon_core::proximity::{Norm, ProximitySignal};
use rbon_core::{Beta, Error as CoreError, Method, PairChooser};

mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rbon", version, about = "Regularized Best-of-N reranking")]
pub struct Cli {
    /// Worker threads for per-instruction work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Directory for cached utility matrices.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pick one candidate per instruction.
    Select(SelectArgs),
    /// Tune beta for MBR-BoN on a development set.
    Sweep(SweepArgs),
    /// Tune beta on development subsamples of several sizes.
    AblateDev(AblateArgs),
    /// Emit chosen/rejected preference pairs.
    Pairgen(PairgenArgs),
    /// Check that MBR decoding equals Wasserstein-distance minimization.
    VerifyWd(VerifyArgs),
    /// Correlate distance to the embedding center with MBR or log-probability.
    AnalyzeProximity(ProximityArgs),
    /// Run the synthetic reward-hacking benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Bon,
    Mbr,
    MbrBon,
    KlRbon,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bon => Method::Bon,
            MethodArg::Mbr => Method::Mbr,
            MethodArg::MbrBon => Method::MbrBon,
            MethodArg::KlRbon => Method::KlRbon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChooserArg {
    Bon,
    MbrBon,
}

impl From<ChooserArg> for PairChooser {
    fn from(c: ChooserArg) -> Self {
        match c {
            ChooserArg::Bon => PairChooser::Bon,
            ChooserArg::MbrBon => PairChooser::MbrBon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalArg {
    Mbr,
    Logprob,
}

impl From<SignalArg> for ProximitySignal {
    fn from(s: SignalArg) -> Self {
        match s {
            SignalArg::Mbr => ProximitySignal::Mbr,
            SignalArg::Logprob => ProximitySignal::Logprob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormArg {
    L1,
    L2,
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// JSONL output, one record per instruction.
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Proxy reward name (not needed for mbr).
    #[arg(long, default_value = "proxy")]
    pub proxy: String,
    /// Regularization strength; accepts "inf".
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub beta: Beta,
    /// Min-max normalize the MBR objective per instruction.
    #[arg(long)]
    pub normalize_mbr: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Development candidate sets with both proxy and gold rewards.
    #[arg(long)]
    pub input: PathBuf,
    /// CSV report, one row per beta.
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, default_value = "proxy")]
    pub proxy: String,
    #[arg(long, default_value = "gold")]
    pub gold: String,
    /// Comma-separated beta grid; defaults to 0 plus 1e-6 ..= 20.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<Beta>>,
    #[arg(long)]
    pub normalize_mbr: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub dev: PathBuf,
    /// Held-out sets on which each tuned beta is scored.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,25,50,100")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "proxy")]
    pub proxy: String,
    #[arg(long, default_value = "gold")]
    pub gold: String,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<Beta>>,
    #[arg(long)]
    pub normalize_mbr: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PairgenArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
    #[arg(long, default_value = "proxy")]
    pub proxy: String,
    #[arg(long, value_enum, default_value = "mbr-bon")]
    pub chooser: ChooserArg,
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub beta: Beta,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// CSV with one row per instruction.
    #[arg(long)]
    #[serde(skip)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProximityArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Receives `proximity_rho.csv` and `proximity_points.csv`.
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "mbr")]
    pub signal: SignalArg,
    #[arg(long, value_enum, default_value = "l1")]
    pub norm: NormArg,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Receives the curve CSVs, the dev sweep and a summary.
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_instructions: usize,
    #[arg(long, default_value_t = 128)]
    pub n_candidates: usize,
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub target_rho: f64,
    /// Fixed proxy noise scale; calibrated to --target-rho when omitted.
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Make embedding geometry independent of quality.
    #[arg(long)]
    pub decoupled: bool,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<Beta>>,
    /// Also write the generated evaluation and development sets as JSONL.
    #[arg(long)]
    pub emit_sets: bool,
}

/// A run completed but at least one instance failed verification.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct VerificationFailed(pub String);

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return EXIT_VERIFY;
    }
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::InvalidArgument(_) | CoreError::NegativeBeta(_)) => EXIT_USAGE,
        Some(CoreError::PropositionViolation(_)) => EXIT_VERIFY,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: --threads: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| commands::dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn exit_codes_by_error_kind() {
        let verify = anyhow::Error::new(VerificationFailed("x".into())).context("verify-wd");
        assert_eq!(exit_code(&verify), EXIT_VERIFY);
        let violation: anyhow::Result<()> = Err(CoreError::PropositionViolation("gap".into())).context("instance");
        assert_eq!(exit_code(&violation.unwrap_err()), EXIT_VERIFY);
        let usage: anyhow::Result<()> = Err(CoreError::InvalidArgument("beta grid is empty".into())).context("sweep");
        assert_eq!(exit_code(&usage.unwrap_err()), EXIT_USAGE);
        let data: anyhow::Result<()> = Err(CoreError::Parse {
            line: 3,
            message: "eof".into(),
        })
        .context("in.jsonl");
        assert_eq!(exit_code(&data.unwrap_err()), EXIT_DATA);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["rbon", "--help"]), EXIT_OK);
        assert_eq!(run(["rbon", "select", "--help"]), EXIT_OK);
    }
}
