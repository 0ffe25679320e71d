//! `nlcov`: compute coverage criteria over activation traces, run the axiom
//! checks and the stability/diversity studies, and generate traces.
//!
//! Every command writes its artifacts plus a `run.json` echoing the fully
//! resolved configuration into `--out`. Errors go to stderr as a single JSON
//! object and the process exits nonzero.

mod commands;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nlcov_core::criteria::CriterionParams;

#[derive(Parser)]
#[command(name = "nlcov", version, about = "Coverage criteria and axiom checks over activation traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one criterion on a trace.
    Compute(ComputeArgs),
    /// Check monotonicity, order independence and duplicate insensitivity.
    Axioms(AxiomsArgs),
    /// Repeat a criterion on the recorded order and on random shuffles.
    ShuffleStudy(ShuffleArgs),
    /// Per-layer contributions as CSV and a log-scale bar chart.
    LayerReport(LayerReportArgs),
    /// JS divergence of selected suites from the full set's activation spectrum.
    Diversity(DiversityArgs),
    /// Build white-noise suites of |dataset| and 10x|dataset| inputs.
    MakeSuites(MakeSuitesArgs),
    /// Write a fixture trace or trace a synthetic dataset through a toy network.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long, default_value = "nlcov-out")]
    pub out: PathBuf,
    /// Comma-separated output formats.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["json", "csv", "svg"])]
    pub format: Vec<Format>,
    /// JSON object whose keys override the command-line values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Common {
    pub fn wants(&self, format: Format) -> bool {
        self.format.contains(&format)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 0.75)]
    pub nc_threshold: f64,
    #[arg(long, default_value_t = 100)]
    pub kmnc_sections: usize,
    #[arg(long, default_value_t = 1)]
    pub tknc_k: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Fixed log-determinant floor for detcov (default scales with the
    /// covariance diagonal).
    #[arg(long)]
    pub ridge: Option<f64>,
}

impl From<&ParamArgs> for CriterionParams {
    fn from(p: &ParamArgs) -> Self {
        CriterionParams {
            nc_threshold: p.nc_threshold,
            kmnc_sections: p.kmnc_sections,
            tknc_k: p.tknc_k,
            batch_size: p.batch_size,
            ridge: p.ridge,
        }
    }
}

/// Inputs shared by the commands that evaluate a criterion on a trace.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CriterionArgs {
    /// Trace directory.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub criterion: Option<String>,
    /// Training trace used to profile neuron ranges (kmnc, nbc, snac).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Reference trace whose statistics seed incremental NLC.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub params: ParamArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ComputeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub criterion: CriterionArgs,
    /// JSON array of input indices; defaults to the whole trace in order.
    #[arg(long)]
    pub view: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AxiomsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub criterion: CriterionArgs,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 3)]
    pub chain_len: usize,
    /// Re-evaluate a witness file instead of searching for violations.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ShuffleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub criterion: CriterionArgs,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LayerReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub criterion: CriterionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DiversityArgs {
    /// Existing trace; compares subsets only (no dummy suites).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Network spec JSON; with --dataset, builds noise dummy suites.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Dataset spec JSON.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// penultimate, last, all, a layer index or a layer name.
    #[arg(long, default_value = "penultimate")]
    pub layer: String,
    #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
    pub noise_low: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub noise_high: f64,
    /// Average per-input histograms instead of pooling activations.
    #[arg(long)]
    pub per_input_average: bool,
    /// Also run the simplified PCA + k-means cluster diversity metric.
    #[arg(long)]
    pub simplified: bool,
    #[arg(long, default_value_t = 60)]
    pub max_k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MakeSuitesArgs {
    /// Dataset spec JSON.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Network spec JSON; when given, both suites are also traced.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub base_count: usize,
    #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
    pub noise_low: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    pub noise_high: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenTraceArgs {
    /// worked-example, reversed, collision or dominance.
    #[arg(long)]
    pub fixture: Option<String>,
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Comma-separated layer names to record (default all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

/// Error reported on stderr as `{"error": kind, "message": ...}`.
#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_owned(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

impl From<nlcov_core::Error> for CliError {
    fn from(e: nlcov_core::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Overlays the keys of the `--config` JSON object on the parsed flags.
fn resolve<T: Serialize + DeserializeOwned>(args: T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else { return Ok(args) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let overlay: Value =
        serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
    let Value::Object(overlay) = overlay else {
        return Err(CliError::new("config", "config file must hold a JSON object"));
    };
    let mut base = serde_json::to_value(&args).map_err(|e| CliError::new("config", e.to_string()))?;
    let fields = base.as_object_mut().expect("argument structs serialize to objects");
    for (key, value) in overlay {
        if !fields.contains_key(&key) {
            let mut known: Vec<&String> = fields.keys().collect();
            known.sort();
            return Err(CliError::new(
                "config",
                format!("unknown config key `{key}`; expected one of {known:?}"),
            ));
        }
        fields.insert(key, value);
    }
    serde_json::from_value(base).map_err(|e| CliError::new("config", e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    macro_rules! dispatch {
        ($args:expr, $name:literal, $f:path) => {{
            let config = $args.common.config.clone();
            let mut args = resolve($args, config.as_deref())?;
            args.common.config = config;
            $f(&args, &commands::RunInfo::new($name, &args, args.common.config.as_deref())?)
        }};
    }
    match cli.command {
        Command::Compute(a) => dispatch!(a, "compute", commands::compute),
        Command::Axioms(a) => dispatch!(a, "axioms", commands::axioms),
        Command::ShuffleStudy(a) => dispatch!(a, "shuffle-study", commands::shuffle_study),
        Command::LayerReport(a) => dispatch!(a, "layer-report", commands::layer_report),
        Command::Diversity(a) => dispatch!(a, "diversity", commands::diversity),
        Command::MakeSuites(a) => dispatch!(a, "make-suites", commands::make_suites),
        Command::GenTrace(a) => dispatch!(a, "gen-trace", commands::gen_trace),
    }
}

fn emit_error(e: &CliError) {
    let obj = serde_json::json!({ "error": e.kind, "message": e.message });
    eprintln!("{obj}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            emit_error(&CliError::new("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(&e);
            ExitCode::FAILURE
        }
    }
}
