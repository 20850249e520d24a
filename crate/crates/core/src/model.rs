//! Core value types shared by every stage of the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Occupancy status of a parking space in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Occupied,
    Empty,
}

impl Status {
    pub fn is_occupied(self) -> bool {
        matches!(self, Status::Occupied)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Occupied => f.write_str("occupied"),
            Status::Empty => f.write_str("empty"),
        }
    }
}

/// One (camera, space, timestamp) record with its annotated status.
///
/// `car_id` is the ground-truth identity of the parked car, and is only
/// meaningful on occupied records. `image_ref` is an opaque key used to look
/// up externally produced scores.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceObservation {
    pub camera_id: String,
    pub space_id: String,
    pub timestamp: i64,
    pub status: Status,
    #[serde(default)]
    pub car_id: Option<String>,
    #[serde(default)]
    pub image_ref: Option<String>,
}

impl SpaceObservation {
    pub fn occupied(camera: &str, space: &str, timestamp: i64, car: &str) -> Self {
        Self {
            camera_id: camera.to_owned(),
            space_id: space.to_owned(),
            timestamp,
            status: Status::Occupied,
            car_id: Some(car.to_owned()),
            image_ref: None,
        }
    }

    pub fn empty(camera: &str, space: &str, timestamp: i64) -> Self {
        Self {
            camera_id: camera.to_owned(),
            space_id: space.to_owned(),
            timestamp,
            status: Status::Empty,
            car_id: None,
            image_ref: None,
        }
    }

    /// Key used to look this observation up in a score table: the
    /// `image_ref` when present, `camera:space:timestamp` otherwise.
    pub fn key(&self) -> String {
        match &self.image_ref {
            Some(r) => r.clone(),
            None => format!("{}:{}:{}", self.camera_id, self.space_id, self.timestamp),
        }
    }
}

/// Key identifying the comparison of two frames of the same space.
///
/// Timestamps are sorted so that `pair_key(a, b) == pair_key(b, a)`.
pub fn pair_key(a: &SpaceObservation, b: &SpaceObservation) -> String {
    let (lo, hi) = if a.timestamp <= b.timestamp {
        (a.timestamp, b.timestamp)
    } else {
        (b.timestamp, a.timestamp)
    };
    format!("{}:{}:{}:{}", a.camera_id, a.space_id, lo, hi)
}

/// Time-ordered observations of a single space, spaced exactly `interval_k`
/// seconds apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSequence {
    pub camera_id: String,
    pub space_id: String,
    pub interval_k: i64,
    pub observations: Vec<SpaceObservation>,
}

impl SpaceSequence {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_ts(&self) -> Option<i64> {
        self.observations.first().map(|o| o.timestamp)
    }
}

/// A ground-truth stay: one car continuously parked in one space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundTruthStay {
    pub camera_id: String,
    pub space_id: String,
    pub first_ts: i64,
    pub last_ts: i64,
    pub car_id: String,
    pub dwell_seconds: i64,
}

/// A closed interval the pipeline attributes to a single car.
///
/// Field order gives the canonical sort `(camera, space, start_ts)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredictedEpisode {
    pub camera_id: String,
    pub space_id: String,
    pub start_ts: i64,
    pub end_ts: i64,
    pub dwell_seconds: i64,
}

/// Ground-truth label attached to a calibration score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

/// A score produced by an external model, optionally labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub key: String,
    pub score: f64,
    #[serde(default)]
    pub label: Option<Label>,
}
