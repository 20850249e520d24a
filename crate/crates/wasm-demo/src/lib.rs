//! Browser bindings for the simulator. Every entry point takes and returns
//! JSON strings; errors come back as JS exceptions with a message.

use parkdwell::dataset::derive_ground_truth;
use parkdwell::engine::track_sequence;
use parkdwell::evaluation::EvalOptions;
use parkdwell::perception::{MissingIdentity, NoiseConfig, NoisyClassifier, NoisyComparator, StatusClassifier};
use parkdwell::simulator::{generate_lot, noise_seed, run_trial, sweep, Preset, SimConfig, SweepAxis, SweepOptions};
use parkdwell::Status;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Lot and noise settings from the page's sliders. Missing fields take the
/// preset's values.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub preset: String,
    pub n_spaces: Option<usize>,
    pub k_seconds: Option<i64>,
    pub horizon_frames: Option<usize>,
    pub arrival_prob: Option<f64>,
    pub dwell_frames_mean: Option<f64>,
    pub p_occ_as_empty: Option<f64>,
    pub p_empty_as_occ: Option<f64>,
    pub far: Option<f64>,
    pub frr: Option<f64>,
    pub seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            preset: "pklot".into(),
            n_spaces: None,
            k_seconds: None,
            horizon_frames: None,
            arrival_prob: None,
            dwell_frames_mean: None,
            p_occ_as_empty: None,
            p_empty_as_occ: None,
            far: None,
            frr: None,
            seed: 0,
        }
    }
}

impl Params {
    fn resolve(&self) -> Result<(SimConfig, NoiseConfig), String> {
        let preset: Preset = self.preset.parse().map_err(|e| format!("{e}"))?;
        let mut cfg = preset.sim_config();
        cfg.seed = self.seed;
        cfg.n_spaces = self.n_spaces.unwrap_or(cfg.n_spaces);
        cfg.k_seconds = self.k_seconds.unwrap_or(cfg.k_seconds);
        cfg.horizon_frames = self.horizon_frames.unwrap_or(cfg.horizon_frames);
        cfg.arrival_prob = self.arrival_prob.unwrap_or(cfg.arrival_prob);
        cfg.dwell_frames_mean = self.dwell_frames_mean.unwrap_or(cfg.dwell_frames_mean);
        cfg.validate().map_err(|e| e.to_string())?;
        let mut noise = preset.noise();
        noise.p_occ_as_empty = self.p_occ_as_empty.unwrap_or(noise.p_occ_as_empty);
        noise.p_empty_as_occ = self.p_empty_as_occ.unwrap_or(noise.p_empty_as_occ);
        noise.far = self.far.unwrap_or(noise.far);
        noise.frr = self.frr.unwrap_or(noise.frr);
        noise.seed = noise_seed(self.seed);
        noise.validate().map_err(|e| e.to_string())?;
        Ok((cfg, noise))
    }
}

fn parse(params: &str) -> Result<Params, String> {
    if params.trim().is_empty() {
        return Ok(Params::default());
    }
    serde_json::from_str(params).map_err(|e| format!("bad parameters: {e}"))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TrialSummary {
    stays: usize,
    episodes: usize,
    report: parkdwell::evaluation::EvalReport,
}

/// One lot tracked with noisy perception: error metrics, record counts and
/// the dwell histogram.
pub fn trial(params: &str) -> Result<String, String> {
    let (cfg, noise) = parse(params)?.resolve()?;
    let t = run_trial(&cfg, &noise, EvalOptions::default()).map_err(|e| e.to_string())?;
    to_json(&TrialSummary {
        stays: t.stays.len(),
        episodes: t.episodes.len(),
        report: t.report,
    })
}

/// Mean metrics over `n_seeds` lots at each value of one axis.
pub fn error_sweep(params: &str, axis: &str, values: &[f64], n_seeds: u32) -> Result<String, String> {
    let p = parse(params)?;
    let (cfg, noise) = p.resolve()?;
    let axis: SweepAxis = axis.parse().map_err(|e| format!("{e}"))?;
    let seeds: Vec<u64> = (0..u64::from(n_seeds.max(1))).map(|i| p.seed.wrapping_add(i)).collect();
    let r = sweep(&cfg, &noise, axis, values, &seeds, SweepOptions::default()).map_err(|e| e.to_string())?;
    to_json(&r.points)
}

#[derive(Serialize)]
struct Frame {
    ts: i64,
    truth: Status,
    car: Option<String>,
    seen: Status,
}

#[derive(Serialize)]
struct Interval {
    start_ts: i64,
    end_ts: i64,
    label: String,
}

#[derive(Serialize)]
struct Trace {
    space_id: String,
    k_seconds: i64,
    frames: Vec<Frame>,
    stays: Vec<Interval>,
    episodes: Vec<Interval>,
}

/// Frame-by-frame view of one space: true and perceived status, the true
/// stays and the episodes the tracker reported.
pub fn trace(params: &str, space: usize) -> Result<String, String> {
    let (cfg, noise) = parse(params)?.resolve()?;
    let lot = generate_lot(&cfg).map_err(|e| e.to_string())?;
    let seq = lot
        .get(space)
        .ok_or_else(|| format!("space {space} out of range (lot has {})", lot.len()))?;
    let cls = NoisyClassifier::new(noise).map_err(|e| e.to_string())?;
    let cmp = NoisyComparator::new(noise, MissingIdentity::Vacant).map_err(|e| e.to_string())?;
    let frames = seq
        .observations
        .iter()
        .map(|o| {
            Ok(Frame {
                ts: o.timestamp,
                truth: o.status,
                car: o.car_id.clone(),
                seen: cls.classify(o).map_err(|e| e.to_string())?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let stays = derive_ground_truth(seq)
        .into_iter()
        .map(|s| Interval {
            start_ts: s.first_ts,
            end_ts: s.last_ts,
            label: s.car_id,
        })
        .collect();
    let episodes = track_sequence(seq, &cls, &cmp)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|e| Interval {
            start_ts: e.start_ts,
            end_ts: e.end_ts,
            label: format!("{} s", e.dwell_seconds),
        })
        .collect();
    to_json(&Trace {
        space_id: seq.space_id.clone(),
        k_seconds: seq.interval_k,
        frames,
        stays,
        episodes,
    })
}

#[wasm_bindgen]
pub fn simulate_trial(params: &str) -> Result<String, JsError> {
    trial(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sweep_error(params: &str, axis: &str, values: &[f64], n_seeds: u32) -> Result<String, JsError> {
    error_sweep(params, axis, values, n_seeds).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn trace_space(params: &str, space: usize) -> Result<String, JsError> {
    trace(params, space).map_err(|e| JsError::new(&e))
}
