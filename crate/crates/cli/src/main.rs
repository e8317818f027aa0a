use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use daindex_core::error::Error;

mod commands;
mod svg;

/// Inequality audits for cohort data and allocation models.
#[derive(Parser, Debug)]
#[command(name = "daindex", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inequality embedded in a dataset: ratio of two groups' deterioration indices.
    DbInequality(DbCmdArgs),
    /// Inequality induced by an allocation model: ratio of A-D curve areas.
    ModelInequality(ModelArgs),
    /// Null-inequality experiment and improvement sweep on synthetic data.
    EvalSynthetic(EvalArgs),
    /// Density samples with raw and boundary-adjusted cutoffs, for plotting.
    PdfDump(PdfArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Patient CSV.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Measurement spec JSON.
    #[arg(long)]
    pub specs: PathBuf,
    /// Measurement to audit.
    #[arg(long)]
    pub measurement: String,
    /// Restrict to one stratum and use its threshold.
    #[arg(long)]
    pub stratum: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct IndexArgs {
    /// Number of steps in the k-step index.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Step weights: `uniform`, `linear` or `csv:w1,w2,...`.
    #[arg(long, default_value = "linear")]
    pub weights: String,
    /// Use the single-cutoff index instead of the k-step index.
    #[arg(long)]
    pub one_cutoff: bool,
    /// Use (ub - t) / k as step width rather than its ceiling.
    #[arg(long)]
    pub exact_steps: bool,
    /// Fixed KDE bandwidth; skips cross-validation.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed recorded in the report provenance.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct DbArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Groups to compare as `a,b`; the report is a vs b.
    #[arg(long)]
    pub groups: String,
    #[command(flatten)]
    pub index: IndexArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone)]
pub struct DbCmdArgs {
    #[command(flatten)]
    pub db: DbArgs,
    /// Pool each group over its strata, each with its own threshold.
    #[arg(long, conflicts_with = "stratum")]
    pub pooled: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[command(flatten)]
    pub db: DbArgs,
    /// Decision threshold on the allocation score.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Curve grid size.
    #[arg(long, default_value_t = 50)]
    pub curve_n: usize,
    /// Curve window half-width.
    #[arg(long, default_value_t = 0.05)]
    pub curve_l: f64,
    /// Minimum patients per curve window.
    #[arg(long, default_value_t = 20)]
    pub curve_nu: usize,
    /// Also write curves.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum CiArg {
    Percentile,
    StudentT,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Base cohort CSV; the internal generator is used when omitted.
    #[arg(long, requires = "specs")]
    pub cohort: Option<PathBuf>,
    #[arg(long, requires = "cohort")]
    pub specs: Option<PathBuf>,
    /// Records in the generated base cohort.
    #[arg(long, default_value_t = 60_000)]
    pub base_n: usize,
    /// Measurements to evaluate (repeatable).
    #[arg(long = "measurement")]
    pub measurements: Vec<String>,
    /// Stratum for thresholds; defaults to the source group when it has one.
    #[arg(long)]
    pub stratum: Option<String>,
    /// Source and relabelled group as `source,target`.
    #[arg(long, default_value = "male,female")]
    pub groups: String,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Number of improvement strengths.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub max_strength: f64,
    /// Healthy reference as `measurement=value` (repeatable).
    #[arg(long = "healthy-ref")]
    pub healthy_refs: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    pub sample_fraction: f64,
    #[arg(long, value_enum, default_value_t = CiArg::Percentile)]
    pub ci: CiArg,
    #[command(flatten)]
    pub index: IndexArgs,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed for the generator and every run.
    #[arg(long, default_value_t = 2022)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct PdfArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Groups to include as `a,b,...`; all groups when omitted. Without
    /// --stratum, every stratum of each group is dumped.
    #[arg(long)]
    pub groups: Option<String>,
    /// Samples per group.
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    #[command(flatten)]
    pub index: IndexArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Degenerate(_) => 3,
        _ => 2,
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("DAINDEX_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            // Only fails if a global pool already exists.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring DAINDEX_THREADS={v:?}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = panic::catch_unwind(|| match cli.command {
        Command::DbInequality(a) => commands::db_inequality(&a),
        Command::ModelInequality(a) => commands::model_inequality(&a),
        Command::EvalSynthetic(a) => commands::eval_synthetic(&a),
        Command::PdfDump(a) => commands::pdf_dump(&a),
    });
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(1),
    }
}
