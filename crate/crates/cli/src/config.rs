//! Command-line arguments. The parsed [`Command`] is the run configuration:
//! it is embedded as JSON in every output file and can be fed back through
//! `--config` to reproduce a run.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use confscore::dataprep::{LabelScope, DEFAULT_TILE_SIZE};
use confscore::experiment::SweepParam;
use confscore::score::{ScoreKind, ScoreSpec, UMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "confscore", version, about = "Conformal classification with rank-aware nonconformity scores")]
pub struct Cli {
    /// Run from a JSON config, or from the `# config:` line of a previous output file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Score every class of every example.
    Score(ScoreArgs),
    /// Compute a calibration record from labelled probabilities.
    Calibrate(CalibrateArgs),
    /// Build prediction sets from a calibration record.
    Predict(PredictArgs),
    /// Repeated random calibration/test splits over several scores.
    Experiment(ExperimentArgs),
    /// Sweep the RAPS lambda or the RePIP gamma.
    Sweep(SweepArgs),
    /// Write a synthetic probability file.
    Synth(SynthArgs),
    /// Tile segmentation masks into a classification manifest.
    Dataprep(DataprepArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Hyperparams {
    /// RAPS penalty weight.
    #[arg(long, default_value_t = 0.02)]
    pub lambda: f64,
    /// RePIP penalty weight.
    #[arg(long, default_value_t = 0.02)]
    pub gamma: f64,
    /// Rank from which RAPS/RePIP penalize.
    #[arg(long, default_value_t = 3)]
    pub k_reg: usize,
    /// APS/RAPS tie-breaking: `random`, `fixed` or `fixed:<u>`.
    #[arg(long = "u", default_value = "random")]
    pub u_mode: UMode,
}

impl Hyperparams {
    pub fn spec(&self, kind: ScoreKind) -> ScoreSpec {
        ScoreSpec::new(kind)
            .with_lambda(self.lambda)
            .with_gamma(self.gamma)
            .with_k_reg(self.k_reg)
            .with_u_mode(self.u_mode)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "pip")]
    pub spec: ScoreKind,
    #[command(flatten)]
    pub hyper: Hyperparams,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "pip")]
    pub spec: ScoreKind,
    #[command(flatten)]
    pub hyper: Hyperparams,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Per-trial results.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-spec mean/std/min/max table.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Directional comparison of the scores.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ip,ms,aps,raps,pip,repip")]
    pub specs: Vec<ScoreKind>,
    #[command(flatten)]
    pub hyper: Hyperparams,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Calibration share of the pooled calibration + test data.
    #[arg(long, default_value_t = confscore::experiment::DEFAULT_CAL_FRACTION)]
    pub cal_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace empty prediction sets with the top-ranked class.
    #[arg(long)]
    pub fill_empty: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Saturation notes for neighbouring grid values.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `lambda` (RAPS) or `gamma` (RePIP).
    #[arg(long, default_value = "gamma")]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.05,0.1,0.5,1")]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub k_reg: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = confscore::experiment::DEFAULT_CAL_FRACTION)]
    pub cal_fraction: f64,
    #[arg(long = "u", default_value = "random")]
    pub u_mode: UMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 13)]
    pub k: usize,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = confscore::synth::DEFAULT_CONCENTRATION)]
    pub concentration: f64,
    /// Class prior as comma-separated weights summing to 1 (default uniform).
    #[arg(long, value_delimiter = ',')]
    pub prior: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DataprepArgs {
    /// Directory of single-channel PNG masks (processed in file-name order).
    #[arg(long)]
    pub masks: PathBuf,
    /// `id,name` class table.
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Per-class tile counts.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    pub tile_size: usize,
    /// Majority vote scope for mixed tiles: `non-soil` or `all`.
    #[arg(long, default_value = "non-soil")]
    pub scope: LabelScope,
    /// Soil class id (default: the class named `soil`).
    #[arg(long)]
    pub soil_id: Option<u16>,
    /// `<class>:<count>` to keep only `count` random tiles of a class; repeatable.
    #[arg(long)]
    pub undersample: Vec<String>,
    /// Classes (ids or names) to remove after undersampling.
    #[arg(long, value_delimiter = ',')]
    pub drop: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Command {
    /// Master seed of the invocation.
    pub fn seed(&self) -> u64 {
        match self {
            Command::Score(a) => a.seed,
            Command::Calibrate(a) => a.seed,
            Command::Predict(a) => a.seed,
            Command::Experiment(a) => a.seed,
            Command::Sweep(a) => a.seed,
            Command::Synth(a) => a.seed,
            Command::Dataprep(a) => a.seed,
        }
    }
}
