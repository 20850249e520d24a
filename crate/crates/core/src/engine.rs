//! The per-space dwell timer and its sweep over sequences.
//!
//! Each frame runs one [`dwell_step`]:
//!
//! * current frame empty: the open episode (if any) ends, no timer runs;
//! * current occupied, previous empty or absent: a car just parked, a new
//!   timer starts at 0;
//! * both occupied: the comparator decides. Same car adds `k` seconds to the
//!   timer; a different car ends the episode and starts a new timer at 0.
//!
//! An episode ending on an empty frame keeps the elapsed value of its last
//! occupied frame. An episode still open when the sequence ends is closed at
//! the final timestamp.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PredictedEpisode, SpaceObservation, SpaceSequence, Status};
use crate::par::map_ordered;
use crate::perception::{CarComparator, PerceptionError, StatusClassifier, Verdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("({camera_id}, {space_id}) at {timestamp}: {source}")]
    Perception {
        camera_id: String,
        space_id: String,
        timestamp: i64,
        #[source]
        source: PerceptionError,
    },
    #[error("({camera_id}, {space_id}): frames at {prev_ts} and {timestamp} are not {interval_k}s apart")]
    Spacing {
        camera_id: String,
        space_id: String,
        prev_ts: i64,
        timestamp: i64,
        interval_k: i64,
    },
}

impl EngineError {
    fn perception(obs: &SpaceObservation, source: PerceptionError) -> Self {
        EngineError::Perception {
            camera_id: obs.camera_id.clone(),
            space_id: obs.space_id.clone(),
            timestamp: obs.timestamp,
            source,
        }
    }
}

/// A frame together with the status the classifier assigned to it.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub obs: &'a SpaceObservation,
    pub status: Status,
}

/// The running timer of the car currently parked in a space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeState {
    pub camera_id: String,
    pub space_id: String,
    pub start_ts: i64,
    pub elapsed_seconds: i64,
    pub last_obs: SpaceObservation,
}

impl EpisodeState {
    fn open(obs: &SpaceObservation) -> Self {
        Self {
            camera_id: obs.camera_id.clone(),
            space_id: obs.space_id.clone(),
            start_ts: obs.timestamp,
            elapsed_seconds: 0,
            last_obs: obs.clone(),
        }
    }

    pub fn close(self) -> PredictedEpisode {
        PredictedEpisode {
            camera_id: self.camera_id,
            space_id: self.space_id,
            start_ts: self.start_ts,
            end_ts: self.start_ts + self.elapsed_seconds,
            dwell_seconds: self.elapsed_seconds,
        }
    }
}

/// Result of one [`dwell_step`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub state: Option<EpisodeState>,
    pub closed: Option<PredictedEpisode>,
}

/// Advances the timer of one space by one frame.
///
/// `prev` is the frame `k` seconds earlier, absent at the start of a
/// sequence. The comparator is consulted only when both frames are occupied.
pub fn dwell_step<C: CarComparator + ?Sized>(
    current: Frame<'_>,
    prev: Option<Frame<'_>>,
    k: i64,
    comparator: &C,
    state: Option<EpisodeState>,
) -> Result<StepOutcome, EngineError> {
    if let Some(q) = prev {
        if current.obs.timestamp - q.obs.timestamp != k {
            return Err(EngineError::Spacing {
                camera_id: current.obs.camera_id.clone(),
                space_id: current.obs.space_id.clone(),
                prev_ts: q.obs.timestamp,
                timestamp: current.obs.timestamp,
                interval_k: k,
            });
        }
    }

    if current.status == Status::Empty {
        return Ok(StepOutcome {
            state: None,
            closed: state.map(EpisodeState::close),
        });
    }

    let q = match prev {
        Some(q) if q.status == Status::Occupied => q,
        // car just parked
        _ => {
            return Ok(StepOutcome {
                state: Some(EpisodeState::open(current.obs)),
                closed: state.map(EpisodeState::close),
            })
        }
    };

    let verdict = comparator
        .compare(q.obs, current.obs)
        .map_err(|e| EngineError::perception(current.obs, e))?;

    match (verdict, state) {
        (Verdict::Same, Some(mut s)) => {
            s.elapsed_seconds += k;
            s.last_obs = current.obs.clone();
            Ok(StepOutcome {
                state: Some(s),
                closed: None,
            })
        }
        (_, state) => Ok(StepOutcome {
            state: Some(EpisodeState::open(current.obs)),
            closed: state.map(EpisodeState::close),
        }),
    }
}

/// Classifies every frame of `seq` and folds [`dwell_step`] over it.
pub fn track_sequence<S, C>(
    seq: &SpaceSequence,
    classifier: &S,
    comparator: &C,
) -> Result<Vec<PredictedEpisode>, EngineError>
where
    S: StatusClassifier + ?Sized,
    C: CarComparator + ?Sized,
{
    let statuses = seq
        .observations
        .iter()
        .map(|o| classifier.classify(o).map_err(|e| EngineError::perception(o, e)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut episodes = Vec::new();
    let mut state = None;
    let mut prev: Option<Frame<'_>> = None;
    for (obs, &status) in seq.observations.iter().zip(&statuses) {
        let frame = Frame { obs, status };
        let out = dwell_step(frame, prev, seq.interval_k, comparator, state)?;
        episodes.extend(out.closed);
        state = out.state;
        prev = Some(frame);
    }
    episodes.extend(state.map(EpisodeState::close));
    Ok(episodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackOptions {
    /// Worker threads; 1 runs on the calling thread.
    pub parallelism: usize,
    /// Stop scheduling new sequences after the first failure.
    pub fail_fast: bool,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            fail_fast: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("{} sequence(s) failed; first: {}", .0.len(), .0[0])]
    Sequences(Vec<EngineError>),
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Called with `(done, total)` after each sequence finishes.
pub type ProgressFn<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// Runs [`track_sequence`] over every sequence and returns all episodes
/// sorted by `(camera, space, start_ts)`.
///
/// Output does not depend on `opts.parallelism`.
pub fn track_dataset<S, C>(
    sequences: &[SpaceSequence],
    classifier: &S,
    comparator: &C,
    opts: TrackOptions,
    progress: Option<ProgressFn<'_>>,
) -> Result<Vec<PredictedEpisode>, TrackError>
where
    S: StatusClassifier + ?Sized,
    C: CarComparator + ?Sized,
{
    if opts.parallelism == 0 {
        return Err(TrackError::InvalidParallelism);
    }
    let total = sequences.len();
    let done = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);

    let run_one = |seq: &SpaceSequence| -> Option<Result<Vec<PredictedEpisode>, EngineError>> {
        if opts.fail_fast && stop.load(Ordering::Relaxed) {
            return None;
        }
        let res = track_sequence(seq, classifier, comparator);
        if res.is_err() {
            stop.store(true, Ordering::Relaxed);
        }
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        if let Some(cb) = progress {
            cb(n, total);
        }
        Some(res)
    };

    let results = map_ordered(sequences, opts.parallelism, run_one).map_err(|e| TrackError::Pool(e.0))?;

    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    for res in results.into_iter().flatten() {
        match res {
            Ok(eps) => episodes.extend(eps),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(TrackError::Sequences(failures));
    }
    episodes.sort();
    Ok(episodes)
}
