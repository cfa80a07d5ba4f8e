//! Command-line front end: generate synthetic datasets, fit any model
//! family, predict, evaluate, sweep model selection, and segment curves.
//! All artifacts are plain CSV/JSON so external tools can plot them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit
//! degeneracy after restarts.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curveclust::Error;

#[derive(Parser)]
#[command(name = "curveclust", version, about = "Model-based clustering, segmentation and classification of curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus its ground truth.
    Generate(GenerateArgs),
    /// Fit a model and write model/partition/means/report artifacts.
    Fit(FitArgs),
    /// Classify or cluster curves under a previously fitted model.
    Predict(PredictArgs),
    /// Compare predicted labels with the labels in the dataset.
    Evaluate(EvaluateArgs),
    /// Fit every candidate in a K/R sweep and keep the winner.
    Select(SelectArgs),
    /// Optimal piecewise-polynomial segmentation of each curve.
    Segment(SegmentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelFamily {
    Mixreg,
    Pwrm,
    Mixhmmr,
    Mixrhlp,
    Rhlp,
    Flda,
    Fmda,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Poly,
    Spline,
    Bspline,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Bic,
    Aic,
    Icl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Waveform,
    Regimes,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    /// Clusters (regimes generator only).
    #[arg(long = "K", default_value_t = 3)]
    pub k: usize,
    /// Regimes per curve (regimes generator only).
    #[arg(long = "R", default_value_t = 1)]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub degree: usize,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

/// Flags shared by fit and select; unset numeric options fall back to
/// the config file, then to defaults.
#[derive(Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: ModelFamily,
    #[arg(long, value_enum, default_value = "poly")]
    pub basis: BasisArg,
    #[arg(long)]
    pub degree: Option<usize>,
    /// Interior knot count (spline/bspline bases).
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Regimes: a scalar or a per-cluster comma-separated list.
    #[arg(long = "R", value_delimiter = ',')]
    pub r: Option<Vec<usize>>,
    /// Estimate the number of clusters with the penalized robust EM
    /// (mixreg only; --K not required).
    #[arg(long)]
    pub robust: bool,
    /// Fixed entropy-penalty weight for --robust instead of the
    /// built-in schedule.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Linearly resample curves onto a common grid (pwrm).
    #[arg(long)]
    pub interpolate: bool,
    /// Shared variance and equal proportions (pwrm CEM); implies --cem.
    #[arg(long)]
    pub constrained: bool,
    /// Hard-assignment CEM instead of EM (pwrm).
    #[arg(long)]
    pub cem: bool,
    /// JSON file with default option values (flags take precedence).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Candidate cluster counts: "1..5", "1,2,3" or a single value.
    #[arg(long = "K-range", value_name = "RANGE")]
    pub k_range: Option<String>,
    /// Candidate regime counts, same syntax.
    #[arg(long = "R-range", value_name = "RANGE")]
    pub r_range: Option<String>,
    #[arg(long, value_enum, default_value = "bic")]
    pub criterion: CriterionArg,
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub model_file: PathBuf,
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Dataset CSV carrying the true labels.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// partition.csv or predictions.csv with the predicted labels.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long = "R")]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub degree: usize,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::KnotOutsideDomain { .. }
        | Error::DegenerateDomain
        | Error::InfeasibleSegmentation { .. } => 2,
        Error::Io { .. }
        | Error::MalformedRow { .. }
        | Error::EmptyDataset
        | Error::InconsistentLabel { .. }
        | Error::DuplicateAbscissa { .. }
        | Error::InvalidCurve { .. }
        | Error::NonCommonGrid(_)
        | Error::DimensionMismatch(_)
        | Error::ModelDocument(_) => 3,
        Error::Degenerate(_) | Error::EmptyComponent { .. } => 4,
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // ignore failure: the global pool can only be built once
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("CURVECLUST_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => commands::cmd_generate(&args),
        Command::Fit(args) => {
            init_threads(args.threads);
            commands::cmd_fit(&args)
        }
        Command::Predict(args) => commands::cmd_predict(&args),
        Command::Evaluate(args) => commands::cmd_evaluate(&args),
        Command::Select(args) => {
            init_threads(args.threads);
            commands::cmd_select(&args)
        }
        Command::Segment(args) => commands::cmd_segment(&args),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
