//! Synthetic annotated parking lots and seeded parameter sweeps.
//!
//! Each simulated space alternates between empty gaps and car stays. While
//! empty, a car arrives in a frame with probability `arrival_prob`; a stay
//! lasts at least one frame and is followed by at least one empty frame
//! unless handover is enabled.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::derive_all_ground_truth;
use crate::engine::{track_dataset, TrackError, TrackOptions};
use crate::evaluation::{evaluate, EvalError, EvalOptions, EvalReport};
use crate::model::{GroundTruthStay, PredictedEpisode, SpaceObservation, SpaceSequence};
use crate::par::map_ordered;
use crate::perception::{MissingIdentity, NoiseConfig, NoisyClassifier, NoisyComparator, PerceptionError};
use crate::rng::{keyed_u64, stream_rng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("unknown sweep axis {0:?}")]
    UnknownAxis(String),
    #[error("axis {axis} needs a positive integer, got {value}")]
    NonIntegral { axis: SweepAxis, value: f64 },
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error("evaluation failed for value {value}, seed {seed}: {source}")]
    Eval {
        value: f64,
        seed: u64,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Pool(#[from] crate::par::PoolError),
}

/// Distribution of the number of frames a car stays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DwellDistribution {
    /// `1 + Geometric(1/mean)` frames, mean `dwell_frames_mean`.
    Geometric,
    /// Rounded log-normal frame count, at least 1.
    LogNormal { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub camera_id: String,
    pub n_spaces: usize,
    pub k_seconds: i64,
    pub horizon_frames: usize,
    /// Probability a car arrives in a given empty frame.
    pub arrival_prob: f64,
    pub dwell_frames_mean: f64,
    pub dwell_distribution: DwellDistribution,
    pub seed: u64,
    pub start_ts: i64,
    /// Let a new car occupy the space in the frame right after a departure.
    pub allow_handover: bool,
}

/// Named parameter sets mimicking the two public parking datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 5-minute sampling, cars seen in 25 consecutive frames on average.
    Pklot,
    /// 30-minute sampling, cars seen in 12 consecutive frames on average.
    Cnr,
}

impl FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pklot" => Ok(Preset::Pklot),
            "cnr" | "cnrpark" | "cnrpark-ext" => Ok(Preset::Cnr),
            other => Err(SimError::Config(format!("unknown preset {other:?}"))),
        }
    }
}

impl Preset {
    pub fn sim_config(self) -> SimConfig {
        match self {
            Preset::Pklot => SimConfig {
                camera_id: "sim-pklot".into(),
                n_spaces: 100,
                k_seconds: 300,
                horizon_frames: 144,
                arrival_prob: 0.1,
                dwell_frames_mean: 25.0,
                dwell_distribution: DwellDistribution::Geometric,
                seed: 0,
                start_ts: 0,
                allow_handover: false,
            },
            Preset::Cnr => SimConfig {
                camera_id: "sim-cnr".into(),
                n_spaces: 100,
                k_seconds: 1800,
                horizon_frames: 48,
                arrival_prob: 0.1,
                dwell_frames_mean: 12.0,
                dwell_distribution: DwellDistribution::Geometric,
                seed: 0,
                start_ts: 0,
                allow_handover: false,
            },
        }
    }

    /// Comparator noise for the preset; the classifier starts noiseless.
    /// The false-reject rate puts the share of exactly predicted stays near
    /// the 69% (PKLot) and 78% (CNR) observed with a perfect classifier.
    pub fn noise(self) -> NoiseConfig {
        let frr = match self {
            Preset::Pklot => 0.02,
            Preset::Cnr => 0.035,
        };
        NoiseConfig {
            p_occ_as_empty: 0.0,
            p_empty_as_occ: 0.0,
            far: 0.05,
            frr,
            seed: 0,
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Preset::Pklot.sim_config()
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n_spaces == 0 {
            return bad("n_spaces must be positive".into());
        }
        if self.k_seconds <= 0 {
            return bad(format!("k_seconds must be positive, got {}", self.k_seconds));
        }
        if self.horizon_frames == 0 {
            return bad("horizon_frames must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return bad(format!("arrival_prob {} outside [0, 1]", self.arrival_prob));
        }
        if self.start_ts < 0 {
            return bad(format!("start_ts must be non-negative, got {}", self.start_ts));
        }
        match self.dwell_distribution {
            DwellDistribution::Geometric if !(self.dwell_frames_mean >= 1.0) => bad(format!(
                "dwell_frames_mean must be >= 1, got {}",
                self.dwell_frames_mean
            )),
            DwellDistribution::LogNormal { sigma, mu } if !(sigma >= 0.0 && sigma.is_finite() && mu.is_finite()) => {
                bad(format!("invalid log-normal parameters mu={mu}, sigma={sigma}"))
            }
            _ => Ok(()),
        }
    }
}

enum StaySampler {
    Geometric(Geometric),
    LogNormal(LogNormal<f64>),
}

impl StaySampler {
    fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        match cfg.dwell_distribution {
            DwellDistribution::Geometric => Geometric::new(1.0 / cfg.dwell_frames_mean)
                .map(StaySampler::Geometric)
                .map_err(|e| SimError::Config(e.to_string())),
            DwellDistribution::LogNormal { mu, sigma } => LogNormal::new(mu, sigma)
                .map(StaySampler::LogNormal)
                .map_err(|e| SimError::Config(e.to_string())),
        }
    }

    fn frames<R: Rng>(&self, rng: &mut R) -> usize {
        match self {
            StaySampler::Geometric(g) => 1 + g.sample(rng) as usize,
            StaySampler::LogNormal(d) => (d.sample(rng).round() as usize).max(1),
        }
    }
}

/// Generates one fully annotated sequence per space.
pub fn generate_lot(cfg: &SimConfig) -> Result<Vec<SpaceSequence>, SimError> {
    cfg.validate()?;
    let sampler = StaySampler::new(cfg)?;
    let horizon = cfg.horizon_frames;
    let ts = |frame: usize| cfg.start_ts + frame as i64 * cfg.k_seconds;

    let lot = (0..cfg.n_spaces)
        .map(|i| {
            let space_id = format!("s{i:04}");
            let mut rng = stream_rng(cfg.seed, &[b"lot", cfg.camera_id.as_bytes(), &(i as u64).to_le_bytes()]);
            let mut obs = Vec::with_capacity(horizon);
            let mut frame = 0;
            let mut cars = 0;
            let mut arrive_next = false;
            while frame < horizon {
                let arrives = arrive_next || rng.random_bool(cfg.arrival_prob);
                arrive_next = false;
                if !arrives {
                    obs.push(SpaceObservation::empty(&cfg.camera_id, &space_id, ts(frame)));
                    frame += 1;
                    continue;
                }
                let car = format!("{}/{}/{}", cfg.camera_id, space_id, cars);
                cars += 1;
                let end = (frame + sampler.frames(&mut rng)).min(horizon);
                for f in frame..end {
                    obs.push(SpaceObservation::occupied(&cfg.camera_id, &space_id, ts(f), &car));
                }
                frame = end;
                if frame >= horizon {
                    break;
                }
                if cfg.allow_handover && rng.random_bool(cfg.arrival_prob) {
                    arrive_next = true;
                    continue;
                }
                obs.push(SpaceObservation::empty(&cfg.camera_id, &space_id, ts(frame)));
                frame += 1;
            }
            SpaceSequence {
                camera_id: cfg.camera_id.clone(),
                space_id,
                interval_k: cfg.k_seconds,
                observations: obs,
            }
        })
        .collect();
    Ok(lot)
}

/// A parameter a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NSpaces,
    KSeconds,
    HorizonFrames,
    ArrivalProb,
    DwellFramesMean,
    POccAsEmpty,
    PEmptyAsOcc,
    /// Sets both classifier error rates to the same value.
    ClassifierError,
    Far,
    Frr,
}

const AXES: [(SweepAxis, &str); 10] = [
    (SweepAxis::NSpaces, "n_spaces"),
    (SweepAxis::KSeconds, "k_seconds"),
    (SweepAxis::HorizonFrames, "horizon_frames"),
    (SweepAxis::ArrivalProb, "arrival_prob"),
    (SweepAxis::DwellFramesMean, "dwell_frames_mean"),
    (SweepAxis::POccAsEmpty, "p_occ_as_empty"),
    (SweepAxis::PEmptyAsOcc, "p_empty_as_occ"),
    (SweepAxis::ClassifierError, "classifier_error"),
    (SweepAxis::Far, "far"),
    (SweepAxis::Frr, "frr"),
];

impl SweepAxis {
    pub fn name(self) -> &'static str {
        AXES.iter()
            .find(|(a, _)| *a == self)
            .map(|(_, n)| *n)
            .expect("every axis is named")
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        AXES.iter().map(|(_, n)| *n)
    }

    /// Writes `value` into the field this axis names.
    pub fn apply(self, value: f64, cfg: &mut SimConfig, noise: &mut NoiseConfig) -> Result<(), SimError> {
        let int = || {
            if value.fract() == 0.0 && value >= 1.0 {
                Ok(value as usize)
            } else {
                Err(SimError::NonIntegral { axis: self, value })
            }
        };
        match self {
            SweepAxis::NSpaces => cfg.n_spaces = int()?,
            SweepAxis::KSeconds => cfg.k_seconds = int()? as i64,
            SweepAxis::HorizonFrames => cfg.horizon_frames = int()?,
            SweepAxis::ArrivalProb => cfg.arrival_prob = value,
            SweepAxis::DwellFramesMean => cfg.dwell_frames_mean = value,
            SweepAxis::POccAsEmpty => noise.p_occ_as_empty = value,
            SweepAxis::PEmptyAsOcc => noise.p_empty_as_occ = value,
            SweepAxis::ClassifierError => {
                noise.p_occ_as_empty = value;
                noise.p_empty_as_occ = value;
            }
            SweepAxis::Far => noise.far = value,
            SweepAxis::Frr => noise.frr = value,
        }
        Ok(())
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AXES.iter()
            .find(|(_, n)| *n == s)
            .map(|(a, _)| *a)
            .ok_or_else(|| SimError::UnknownAxis(s.to_owned()))
    }
}

/// Everything produced by one simulated run.
#[derive(Debug, Clone)]
pub struct Trial {
    pub lot: Vec<SpaceSequence>,
    pub stays: Vec<GroundTruthStay>,
    pub episodes: Vec<PredictedEpisode>,
    pub report: EvalReport,
}

/// Generates a lot, tracks it with noisy backends and evaluates the result.
///
/// Frames the classifier wrongly calls occupied carry no car identity; the
/// comparator treats them as a "vacant" identity of their own.
pub fn run_trial(cfg: &SimConfig, noise: &NoiseConfig, eval: EvalOptions) -> Result<Trial, SimError> {
    let lot = generate_lot(cfg)?;
    let stays = derive_all_ground_truth(&lot);
    let classifier = NoisyClassifier::new(*noise)?;
    let comparator = NoisyComparator::new(*noise, MissingIdentity::Vacant)?;
    let episodes = track_dataset(&lot, &classifier, &comparator, TrackOptions::default(), None)?;
    let report = evaluate(&stays, &episodes, eval).map_err(|source| SimError::Eval {
        value: f64::NAN,
        seed: cfg.seed,
        source,
    })?;
    Ok(Trial {
        lot,
        stays,
        episodes,
        report,
    })
}

/// Noise seed used for a given lot seed, so lot and noise streams differ.
pub fn noise_seed(seed: u64) -> u64 {
    keyed_u64(seed, &[b"noise"])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub perfect_fraction: f64,
    /// Ground-truth and predicted counts in the first histogram bin.
    pub short_gt: usize,
    pub short_pred: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seeds: usize,
    pub mean_mae: f64,
    pub mean_rmse: f64,
    pub mean_perfect_fraction: f64,
    pub stdev_mae: f64,
    pub stdev_rmse: f64,
    pub stdev_perfect_fraction: f64,
    pub mean_short_gt: f64,
    pub mean_short_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub base: SimConfig,
    pub noise: NoiseConfig,
    pub points: Vec<SweepPoint>,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub parallelism: usize,
    pub eval: EvalOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            eval: EvalOptions::default(),
        }
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs a trial for every `(value, seed)` cell and aggregates per value.
///
/// For each cell the lot seed is `seed` and the noise seed is
/// [`noise_seed`]`(seed)`. Results do not depend on `opts.parallelism`.
pub fn sweep(
    base: &SimConfig,
    noise: &NoiseConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    opts: SweepOptions,
) -> Result<SweepResult, SimError> {
    if values.is_empty() || seeds.is_empty() {
        return Err(SimError::Config("sweep needs at least one value and one seed".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    // validate every value up front so workers only see good configs
    for &v in &sorted {
        let (mut c, mut n) = (base.clone(), *noise);
        axis.apply(v, &mut c, &mut n)?;
        c.validate()?;
        n.validate()?;
    }

    let grid: Vec<(f64, u64)> = sorted
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells = map_ordered(
        &grid,
        opts.parallelism,
        |&(value, seed)| -> Result<SweepCell, SimError> {
            let mut cfg = base.clone();
            let mut nz = *noise;
            axis.apply(value, &mut cfg, &mut nz)?;
            cfg.seed = seed;
            nz.seed = noise_seed(seed);
            let trial = run_trial(&cfg, &nz, opts.eval).map_err(|e| match e {
                SimError::Eval { source, .. } => SimError::Eval { value, seed, source },
                other => other,
            })?;
            let r = &trial.report;
            let first = r.histogram.first();
            Ok(SweepCell {
                value,
                seed,
                mae: r.mae_seconds,
                rmse: r.rmse_seconds,
                perfect_fraction: r.perfect_fraction,
                short_gt: first.map_or(0, |b| b.gt_count),
                short_pred: first.map_or(0, |b| b.pred_count),
            })
        },
    )?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let points = cells
        .chunks(seeds.len())
        .map(|group| {
            let col = |f: fn(&SweepCell) -> f64| group.iter().map(f).collect::<Vec<_>>();
            let (mean_mae, stdev_mae) = mean_sd(&col(|c| c.mae));
            let (mean_rmse, stdev_rmse) = mean_sd(&col(|c| c.rmse));
            let (mean_pf, stdev_pf) = mean_sd(&col(|c| c.perfect_fraction));
            SweepPoint {
                value: group[0].value,
                seeds: group.len(),
                mean_mae,
                mean_rmse,
                mean_perfect_fraction: mean_pf,
                stdev_mae,
                stdev_rmse,
                stdev_perfect_fraction: stdev_pf,
                mean_short_gt: mean_sd(&col(|c| c.short_gt as f64)).0,
                mean_short_pred: mean_sd(&col(|c| c.short_pred as f64)).0,
            }
        })
        .collect();

    Ok(SweepResult {
        axis,
        base: base.clone(),
        noise: *noise,
        points,
        cells,
    })
}

/// Writes the per-cell `axis,value,seed,mae,rmse,perfect_fraction` CSV.
pub fn write_sweep_csv<W: Write>(out: W, result: &SweepResult) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis", "value", "seed", "mae", "rmse", "perfect_fraction"])?;
    for c in &result.cells {
        w.write_record([
            result.axis.name().to_owned(),
            c.value.to_string(),
            c.seed.to_string(),
            c.mae.to_string(),
            c.rmse.to_string(),
            c.perfect_fraction.to_string(),
        ])?;
    }
    w.flush()
}
