use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use parkdwell::calibration::{Method, Polarity};
use parkdwell::perception::{MissingIdentity, MissingScore};
use parkdwell::simulator::Preset;

#[derive(Debug, Parser)]
#[command(
    name = "parkdwell",
    version,
    about = "Parking dwell-time estimation, calibration and evaluation"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random decision of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for per-space and per-cell work.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: u64,

    /// Directory receiving outputs and run.json.
    #[arg(long, default_value = "parkdwell-out")]
    pub output_dir: PathBuf,

    /// JSON file with default flag values. Top-level keys are global flags,
    /// nested objects keyed by subcommand hold that subcommand's flags.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an annotation file and optionally split it by days.
    Ingest(IngestArgs),
    /// Write a same-car / different-car pair manifest.
    Pairs(PairsArgs),
    /// Pick a decision threshold from labeled scores.
    Calibrate(CalibrateArgs),
    /// Run the dwell timer over annotated sequences.
    Track(TrackArgs),
    /// Compare predicted episodes with ground-truth stays.
    Evaluate(EvaluateArgs),
    /// Sweep one parameter over synthetic lots.
    Simulate(SimulateArgs),
    /// Write a synthetic annotation file.
    Generate(GenerateArgs),
    /// Re-run a previous run from its run.json.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Pairs(_) => "pairs",
            Command::Calibrate(_) => "calibrate",
            Command::Track(_) => "track",
            Command::Evaluate(_) => "evaluate",
            Command::Simulate(_) => "simulate",
            Command::Generate(_) => "generate",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Annotation file, JSON Lines.
    #[arg(long)]
    pub annotations: PathBuf,

    /// Sampling interval k in seconds.
    #[arg(long, default_value_t = 300)]
    pub interval: i64,

    /// Reject gaps of more than one interval instead of splitting there.
    #[arg(long)]
    pub no_split_on_gap: bool,
}

impl DataArgs {
    pub fn ingest_options(&self) -> parkdwell::dataset::IngestOptions {
        parkdwell::dataset::IngestOptions {
            interval_k: self.interval,
            split_on_gap: !self.no_split_on_gap,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Also write train.jsonl / validation.jsonl with this fraction of days
    /// in train.
    #[arg(long)]
    pub train_fraction: Option<f64>,

    /// Offset from UTC, in seconds, used to find calendar days.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub utc_offset: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairMode {
    /// Balanced random pairs for one training epoch.
    Epoch,
    /// One positive and one negative pair per car.
    Eval,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, value_enum, default_value_t = PairMode::Epoch)]
    pub mode: PairMode,

    /// Number of pairs in epoch mode (half positive).
    #[arg(long, default_value_t = 20_000)]
    pub count: usize,

    /// Epoch index, mixed into the seed so each epoch differs.
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Eer,
    FarCap,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Eer => Method::Eer,
            MethodArg::FarCap => Method::FarCap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Likelihood,
    Distance,
}

impl From<PolarityArg> for Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Likelihood => Polarity::Likelihood,
            PolarityArg::Distance => Polarity::Distance,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Labeled score CSV with header key,score,label.
    #[arg(long)]
    pub scores: PathBuf,

    #[arg(long, value_enum, default_value_t = MethodArg::Eer)]
    pub method: MethodArg,

    /// Highest allowed false-accept rate for far-cap.
    #[arg(long, default_value_t = 0.05)]
    pub cap: f64,

    /// Score polarity. Defaults to likelihood for eer and distance for
    /// far-cap.
    #[arg(long, value_enum)]
    pub polarity: Option<PolarityArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Oracle,
    Noisy,
    Scored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingCarIdArg {
    Error,
    Vacant,
}

impl From<MissingCarIdArg> for MissingIdentity {
    fn from(m: MissingCarIdArg) -> Self {
        match m {
            MissingCarIdArg::Error => MissingIdentity::Error,
            MissingCarIdArg::Vacant => MissingIdentity::Vacant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingScoreArg {
    Error,
    Empty,
}

impl From<MissingScoreArg> for MissingScore {
    fn from(m: MissingScoreArg) -> Self {
        match m {
            MissingScoreArg::Error => MissingScore::Error,
            MissingScoreArg::Empty => MissingScore::Empty,
        }
    }
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Probability an occupied frame is classified empty.
    #[arg(long, default_value_t = 0.0)]
    pub p_occ_as_empty: f64,

    /// Probability an empty frame is classified occupied.
    #[arg(long, default_value_t = 0.0)]
    pub p_empty_as_occ: f64,

    /// Probability two different cars are judged the same.
    #[arg(long, default_value_t = 0.0)]
    pub far: f64,

    /// Probability the same car is judged different.
    #[arg(long, default_value_t = 0.0)]
    pub frr: f64,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, value_enum, default_value_t = Backend::Oracle)]
    pub classifier: Backend,

    #[arg(long, value_enum, default_value_t = Backend::Oracle)]
    pub comparator: Backend,

    #[command(flatten)]
    pub noise: NoiseArgs,

    /// Occupancy score CSV (key,score) for the scored classifier.
    #[arg(long)]
    pub occupancy_scores: Option<PathBuf>,

    /// Occupied iff score >= threshold.
    #[arg(long)]
    pub occupancy_threshold: Option<f64>,

    /// calibration.json providing the occupancy threshold.
    #[arg(long, conflicts_with = "occupancy_threshold")]
    pub occupancy_calibration: Option<PathBuf>,

    /// Pair distance CSV (key,score) for the scored comparator.
    #[arg(long)]
    pub pair_scores: Option<PathBuf>,

    /// Same car iff distance <= threshold.
    #[arg(long)]
    pub pair_threshold: Option<f64>,

    /// calibration.json providing the pair threshold.
    #[arg(long, conflicts_with = "pair_threshold")]
    pub pair_calibration: Option<PathBuf>,

    /// What the scored classifier does for a frame without a score.
    #[arg(long, value_enum, default_value_t = MissingScoreArg::Error)]
    pub missing_score: MissingScoreArg,

    /// How oracle and noisy comparators treat frames without a car_id.
    #[arg(long, value_enum, default_value_t = MissingCarIdArg::Error)]
    pub missing_car_id: MissingCarIdArg,

    /// Process every sequence and report all failures.
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Predicted episodes, JSON Lines.
    #[arg(long)]
    pub episodes: PathBuf,

    /// Histogram bin width in seconds.
    #[arg(long, default_value_t = parkdwell::evaluation::DEFAULT_BIN_WIDTH)]
    pub bin_width: i64,

    /// Start of the open-ended last histogram bin, in seconds.
    #[arg(long)]
    pub hist_max: Option<i64>,

    /// Leave spurious episodes out of MAE and RMSE.
    #[arg(long)]
    pub exclude_spurious: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Pklot,
    Cnr,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Pklot => Preset::Pklot,
            PresetArg::Cnr => Preset::Cnr,
        }
    }
}

/// Synthetic lot parameters; unset values come from the preset.
#[derive(Debug, Args)]
pub struct LotArgs {
    #[arg(long, value_enum, default_value_t = PresetArg::Pklot)]
    pub preset: PresetArg,

    #[arg(long)]
    pub n_spaces: Option<usize>,

    #[arg(long)]
    pub k_seconds: Option<i64>,

    #[arg(long)]
    pub horizon_frames: Option<usize>,

    #[arg(long)]
    pub arrival_prob: Option<f64>,

    #[arg(long)]
    pub dwell_frames_mean: Option<f64>,

    /// Draw stay lengths from a log-normal with this mu (needs --lognormal-sigma).
    #[arg(long, requires = "lognormal_sigma", allow_hyphen_values = true)]
    pub lognormal_mu: Option<f64>,

    #[arg(long, requires = "lognormal_mu")]
    pub lognormal_sigma: Option<f64>,

    #[arg(long)]
    pub start_ts: Option<i64>,

    /// Allow a new car in the frame right after a departure.
    #[arg(long)]
    pub allow_handover: bool,
}

/// Noise overrides on top of the preset noise.
#[derive(Debug, Args)]
pub struct SimNoiseArgs {
    #[arg(long)]
    pub p_occ_as_empty: Option<f64>,

    #[arg(long)]
    pub p_empty_as_occ: Option<f64>,

    #[arg(long)]
    pub far: Option<f64>,

    #[arg(long)]
    pub frr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub lot: LotArgs,

    #[command(flatten)]
    pub noise: SimNoiseArgs,

    /// Parameter to sweep.
    #[arg(long)]
    pub axis: String,

    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true, action = clap::ArgAction::Set)]
    pub values: Vec<f64>,

    /// Comma-separated lot seeds, or a single count N meaning seeds
    /// seed..seed+N of the global seed.
    #[arg(long, value_delimiter = ',', default_value = "20", action = clap::ArgAction::Set)]
    pub seeds: Vec<u64>,

    /// Treat --seeds as an explicit list even when it has one element.
    #[arg(long)]
    pub explicit_seeds: bool,

    #[arg(long, default_value_t = parkdwell::evaluation::DEFAULT_BIN_WIDTH)]
    pub bin_width: i64,

    #[arg(long)]
    pub exclude_spurious: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub lot: LotArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// run.json written by an earlier run. Outputs go to the global
    /// --output-dir.
    #[arg(long)]
    pub run: PathBuf,
}
