//! Backends answering "is this space occupied?" and "is this the same car as
//! in the previous frame?".
//!
//! Oracle backends read the annotations. Noisy backends corrupt the oracle
//! answer with configured error rates using keyed randomness, so a decision
//! depends only on the seed and the record(s) it concerns. Scored backends
//! threshold externally produced scores.
//!
//! Score polarity: occupancy scores are likelihoods (`score >= threshold`
//! means occupied); pair scores are distances (`score <= threshold` means
//! same car).

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{pair_key, ScoreRecord, SpaceObservation, Status};
use crate::rng::keyed_unit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("observation {key} has no car_id")]
    MissingCarId { key: String },
    #[error("no occupancy score for key {key}")]
    MissingScore { key: String },
    #[error("no pair score for key {key}")]
    MissingPairScore { key: String },
    #[error("duplicate score key {key}")]
    DuplicateScore { key: String },
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
}

/// Answer of a [`CarComparator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Same,
    Different,
}

impl Verdict {
    fn from_bool(same: bool) -> Self {
        if same {
            Verdict::Same
        } else {
            Verdict::Different
        }
    }

    fn flipped(self) -> Self {
        match self {
            Verdict::Same => Verdict::Different,
            Verdict::Different => Verdict::Same,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Same => f.write_str("same"),
            Verdict::Different => f.write_str("different"),
        }
    }
}

pub trait StatusClassifier: Send + Sync {
    fn classify(&self, obs: &SpaceObservation) -> Result<Status, PerceptionError>;
}

pub trait CarComparator: Send + Sync {
    fn compare(&self, a: &SpaceObservation, b: &SpaceObservation) -> Result<Verdict, PerceptionError>;
}

impl<T: StatusClassifier + ?Sized> StatusClassifier for Box<T> {
    fn classify(&self, obs: &SpaceObservation) -> Result<Status, PerceptionError> {
        (**self).classify(obs)
    }
}

impl<T: CarComparator + ?Sized> CarComparator for Box<T> {
    fn compare(&self, a: &SpaceObservation, b: &SpaceObservation) -> Result<Verdict, PerceptionError> {
        (**self).compare(a, b)
    }
}

/// What annotation-backed comparators do when a frame has no `car_id`.
///
/// That happens when the classifier calls an annotated-empty frame occupied.
/// `Vacant` treats "no car" as an identity of its own: two vacant frames
/// match each other and never match a car.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingIdentity {
    #[default]
    Error,
    Vacant,
}

/// Error rates for the noisy backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Occupied frame reported as empty.
    pub p_occ_as_empty: f64,
    /// Empty frame reported as occupied.
    pub p_empty_as_occ: f64,
    /// Different-car pair reported as the same car.
    pub far: f64,
    /// Same-car pair reported as different cars.
    pub frr: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::zero(0)
    }
}

impl NoiseConfig {
    pub fn zero(seed: u64) -> Self {
        Self {
            p_occ_as_empty: 0.0,
            p_empty_as_occ: 0.0,
            far: 0.0,
            frr: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        for (name, p) in [
            ("p_occ_as_empty", self.p_occ_as_empty),
            ("p_empty_as_occ", self.p_empty_as_occ),
            ("far", self.far),
            ("frr", self.frr),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PerceptionError::InvalidNoise(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn annotated_same(
    a: &SpaceObservation,
    b: &SpaceObservation,
    missing: MissingIdentity,
) -> Result<bool, PerceptionError> {
    match (&a.car_id, &b.car_id, missing) {
        (Some(x), Some(y), _) => Ok(x == y),
        (None, _, MissingIdentity::Error) => Err(PerceptionError::MissingCarId { key: a.key() }),
        (_, None, MissingIdentity::Error) => Err(PerceptionError::MissingCarId { key: b.key() }),
        (x, y, MissingIdentity::Vacant) => Ok(x == y),
    }
}

/// Returns the annotated status unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleClassifier;

impl StatusClassifier for OracleClassifier {
    fn classify(&self, obs: &SpaceObservation) -> Result<Status, PerceptionError> {
        Ok(obs.status)
    }
}

/// Flips the annotated status with the configured per-class error rates.
#[derive(Debug, Clone)]
pub struct NoisyClassifier {
    noise: NoiseConfig,
}

impl NoisyClassifier {
    pub fn new(noise: NoiseConfig) -> Result<Self, PerceptionError> {
        noise.validate()?;
        Ok(Self { noise })
    }
}

impl StatusClassifier for NoisyClassifier {
    fn classify(&self, obs: &SpaceObservation) -> Result<Status, PerceptionError> {
        let (p, flipped) = match obs.status {
            Status::Occupied => (self.noise.p_occ_as_empty, Status::Empty),
            Status::Empty => (self.noise.p_empty_as_occ, Status::Occupied),
        };
        if p <= 0.0 {
            return Ok(obs.status);
        }
        let u = keyed_unit(
            self.noise.seed,
            &[
                b"classify",
                obs.camera_id.as_bytes(),
                obs.space_id.as_bytes(),
                &obs.timestamp.to_le_bytes(),
            ],
        );
        Ok(if u < p { flipped } else { obs.status })
    }
}

/// Answers "same" iff the annotated car identities are equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleComparator {
    pub missing: MissingIdentity,
}

impl OracleComparator {
    pub fn new(missing: MissingIdentity) -> Self {
        Self { missing }
    }
}

impl CarComparator for OracleComparator {
    fn compare(&self, a: &SpaceObservation, b: &SpaceObservation) -> Result<Verdict, PerceptionError> {
        annotated_same(a, b, self.missing).map(Verdict::from_bool)
    }
}

/// Oracle comparison corrupted with false-accept and false-reject rates.
#[derive(Debug, Clone)]
pub struct NoisyComparator {
    noise: NoiseConfig,
    missing: MissingIdentity,
}

impl NoisyComparator {
    pub fn new(noise: NoiseConfig, missing: MissingIdentity) -> Result<Self, PerceptionError> {
        noise.validate()?;
        Ok(Self { noise, missing })
    }
}

impl CarComparator for NoisyComparator {
    fn compare(&self, a: &SpaceObservation, b: &SpaceObservation) -> Result<Verdict, PerceptionError> {
        let truth = Verdict::from_bool(annotated_same(a, b, self.missing)?);
        let p = match truth {
            Verdict::Same => self.noise.frr,
            Verdict::Different => self.noise.far,
        };
        if p <= 0.0 {
            return Ok(truth);
        }
        let (ka, kb) = (a.key(), b.key());
        let (lo, hi) = if ka <= kb { (ka, kb) } else { (kb, ka) };
        let u = keyed_unit(self.noise.seed, &[b"compare", lo.as_bytes(), hi.as_bytes()]);
        Ok(if u < p { truth.flipped() } else { truth })
    }
}

/// Lookup table from observation or pair key to score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: HashMap<String, f64>,
}

impl ScoreTable {
    pub fn from_records(records: &[ScoreRecord]) -> Result<Self, PerceptionError> {
        let mut scores = HashMap::with_capacity(records.len());
        for r in records {
            if scores.insert(r.key.clone(), r.score).is_some() {
                return Err(PerceptionError::DuplicateScore { key: r.key.clone() });
            }
        }
        Ok(Self { scores })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.scores.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Behavior of [`ScoredClassifier`] when a key has no score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingScore {
    #[default]
    Error,
    /// Report the frame as empty and log a warning.
    Empty,
}

/// Occupied iff the occupancy score is at least the threshold.
#[derive(Debug, Clone)]
pub struct ScoredClassifier {
    scores: ScoreTable,
    threshold: f64,
    on_missing: MissingScore,
}

impl ScoredClassifier {
    pub fn new(scores: ScoreTable, threshold: f64, on_missing: MissingScore) -> Self {
        Self {
            scores,
            threshold,
            on_missing,
        }
    }
}

impl StatusClassifier for ScoredClassifier {
    fn classify(&self, obs: &SpaceObservation) -> Result<Status, PerceptionError> {
        let key = obs.key();
        match (self.scores.get(&key), self.on_missing) {
            (Some(s), _) if s >= self.threshold => Ok(Status::Occupied),
            (Some(_), _) => Ok(Status::Empty),
            (None, MissingScore::Error) => Err(PerceptionError::MissingScore { key }),
            (None, MissingScore::Empty) => {
                log::warn!("no occupancy score for {key}, treating as empty");
                Ok(Status::Empty)
            }
        }
    }
}

/// Same car iff the pair distance is at most the threshold.
#[derive(Debug, Clone)]
pub struct ScoredComparator {
    scores: ScoreTable,
    threshold: f64,
}

impl ScoredComparator {
    pub fn new(scores: ScoreTable, threshold: f64) -> Self {
        Self { scores, threshold }
    }
}

impl CarComparator for ScoredComparator {
    fn compare(&self, a: &SpaceObservation, b: &SpaceObservation) -> Result<Verdict, PerceptionError> {
        let key = pair_key(a, b);
        let d = self.scores.get(&key).ok_or(PerceptionError::MissingPairScore { key })?;
        Ok(Verdict::from_bool(d <= self.threshold))
    }
}
