//! Parking dwell-time estimation from per-space occupancy observations.
//!
//! The pipeline classifies each parking-space frame as occupied or empty,
//! then asks a comparator whether two consecutive occupied frames show the
//! same car. A per-space timer grows by the sampling interval while the car
//! stays and restarts when a new car is detected.
//!
//! Modules:
//! * [`dataset`]: annotation ingestion, ground-truth stays, day splits;
//! * [`perception`]: oracle, noisy and score-threshold backends;
//! * [`engine`]: the dwell timer and dataset sweep;
//! * [`calibration`]: EER and FAR-capped thresholds from labeled scores;
//! * [`pairgen`]: same-car / different-car pair manifests;
//! * [`evaluation`]: episode matching, MAE/RMSE, histograms;
//! * [`simulator`]: synthetic lots and seeded parameter sweeps.

pub mod calibration;
pub mod dataset;
pub mod engine;
pub mod evaluation;
pub mod model;
pub mod pairgen;
mod par;
pub mod perception;
pub mod rng;
pub mod simulator;

pub use par::PoolError;

pub use model::{GroundTruthStay, Label, PredictedEpisode, ScoreRecord, SpaceObservation, SpaceSequence, Status};
