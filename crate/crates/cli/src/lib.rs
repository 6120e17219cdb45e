//! Command-line front end for `fock-tomo`.
//!
//! Every command writing to `--out` also writes `<out>.manifest.json` with
//! the command, its parameters and the tool version, so the primary output
//! stays byte-identical across reruns while the run remains auditable.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad flags, unreadable or malformed input.
pub const EXIT_USAGE: i32 = 2;
/// Model, dataset or binning configurations disagree.
pub const EXIT_CONFIG: i32 = 3;
/// Estimation or training failed numerically.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fock_tomo::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use fock_tomo::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Core(e) => match e {
                E::ConfigMismatch(_) => EXIT_CONFIG,
                E::Estimation(_) | E::Divergence(_) => EXIT_NUMERIC,
                E::Domain(_) | E::Parse(_) | E::Io(_) | E::Json(_) => EXIT_USAGE,
            },
        }
    }

    /// Prefixes the message of a core error, keeping its exit code.
    pub fn context(self, prefix: &str) -> Self {
        use fock_tomo::Error as E;
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{prefix}: {m}")),
            CliError::Io { context, source } => CliError::Io {
                context: format!("{prefix}: {context}"),
                source,
            },
            CliError::Core(e) => CliError::Core(match e {
                E::Domain(m) => E::Domain(format!("{prefix}: {m}")),
                E::Estimation(m) => E::Estimation(format!("{prefix}: {m}")),
                E::ConfigMismatch(m) => E::ConfigMismatch(format!("{prefix}: {m}")),
                E::Divergence(m) => E::Divergence(format!("{prefix}: {m}")),
                E::Parse(m) => E::Parse(format!("{prefix}: {m}")),
                other => E::Parse(format!("{prefix}: {other}")),
            }),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fock-tomo", version, about = "Photon-number tomography from homodyne quadratures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic training or test dataset.
    Synth(SynthArgs),
    /// Fit the linear estimator on a training set.
    Train(TrainArgs),
    /// Estimate photon weights from a quadrature file with a trained model.
    Infer(InferArgs),
    /// Maximum-likelihood photon weights by expectation maximisation.
    Mle(MleArgs),
    /// Linear and maximum-likelihood estimates side by side for labelled files.
    Compare(CompareArgs),
    /// Export the Wigner function on a square grid.
    Wigner(WignerArgs),
    /// Extract one quadrature per trigger from detector traces.
    TraceExtract(TraceExtractArgs),
    /// Fit the vacuum/single-photon weighting factor to a quadrature histogram.
    FitEta(FitEtaArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct BinningArgs {
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, default_value_t = -3.2, allow_negative_numbers = true)]
    pub range_min: f64,
    #[arg(long, default_value_t = 3.2, allow_negative_numbers = true)]
    pub range_max: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub instances: usize,
    #[arg(long)]
    pub samples: usize,
    #[command(flatten)]
    pub binning: BinningArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each instance's raw quadratures into this directory.
    #[arg(long, value_name = "DIR")]
    pub emit_quadratures: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub quadratures: PathBuf,
    /// Detection efficiency to undo on the estimated weights.
    #[arg(long)]
    pub efficiency: Option<f64>,
    /// Expected number of bins; must match the model when given.
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub range_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub range_max: Option<f64>,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MleArgs {
    #[arg(long)]
    pub quadratures: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub nmax: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled quadrature files as `LABEL=PATH`, in output order.
    #[arg(required = true, value_name = "LABEL=PATH")]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WignerArgs {
    /// Photon weights as `w0,w1,w2`.
    #[arg(long, conflicts_with = "from_report", required_unless_present = "from_report")]
    pub weights: Option<String>,
    /// Take the weights from an `infer` or `mle` report.
    #[arg(long)]
    pub from_report: Option<PathBuf>,
    /// Half-width of the square grid in both x and p.
    #[arg(long, default_value_t = 3.0)]
    pub range: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceExtractArgs {
    /// Trace CSVs, either `trace_id,t,x` or single `t,x` traces named by file stem.
    #[arg(long, required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
    /// Trigger CSV with header `trace_id,t_c`.
    #[arg(long)]
    pub triggers: PathBuf,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub gamma_rise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitEtaArgs {
    #[arg(long)]
    pub quadratures: PathBuf,
    #[command(flatten)]
    pub binning: BinningArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Mle(_) => "mle",
            Command::Compare(_) => "compare",
            Command::Wigner(_) => "wigner",
            Command::TraceExtract(_) => "trace-extract",
            Command::FitEta(_) => "fit-eta",
        }
    }
}
