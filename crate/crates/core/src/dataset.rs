//! Annotation ingestion, ground-truth derivation and day-based splits.
//!
//! Annotations are JSON Lines, one [`SpaceObservation`] per line:
//!
//! ```text
//! {"camera_id":"UFPR04","space_id":"12","timestamp":1356998400,"status":"occupied","car_id":"c7","image_ref":null}
//! ```
//!
//! Score files are CSV with header `key,score[,label]`, `label` one of
//! `pos`/`neg`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GroundTruthStay, Label, ScoreRecord, SpaceObservation, SpaceSequence, Status};

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: negative timestamp {timestamp}")]
    NegativeTimestamp { line: usize, timestamp: i64 },
    #[error("line {line}: empty record carries car_id {car_id:?}")]
    EmptyWithCar { line: usize, car_id: String },
    #[error("line {line}: duplicate observation for ({camera_id}, {space_id}, {timestamp})")]
    Duplicate {
        line: usize,
        camera_id: String,
        space_id: String,
        timestamp: i64,
    },
    #[error(
        "line {line}: ({camera_id}, {space_id}) jumps from {prev_ts} to {timestamp}, \
         not a multiple of the {interval_k}s interval"
    )]
    NonUniformSpacing {
        line: usize,
        camera_id: String,
        space_id: String,
        prev_ts: i64,
        timestamp: i64,
        interval_k: i64,
    },
    #[error("line {line}: ({camera_id}, {space_id}) has a {gap}s gap and gap splitting is disabled")]
    GapNotAllowed {
        line: usize,
        camera_id: String,
        space_id: String,
        gap: i64,
    },
    #[error("sampling interval must be positive, got {0}")]
    InvalidInterval(i64),
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("score file: {0}")]
    Scores(String),
}

/// How to turn raw observations into [`SpaceSequence`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Sampling interval k in seconds.
    pub interval_k: i64,
    /// Split a space's sequence at jumps of m·k (m > 1). When false such
    /// jumps are an error.
    pub split_on_gap: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            interval_k: 300,
            split_on_gap: true,
        }
    }
}

/// Validated annotations plus summary counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub sequences: Vec<SpaceSequence>,
    pub observations: usize,
    pub spaces: usize,
    pub cars: usize,
}

impl IngestReport {
    pub fn summary(&self) -> IngestSummary {
        IngestSummary {
            observations: self.observations,
            spaces: self.spaces,
            cars: self.cars,
            sequences: self.sequences.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub observations: usize,
    pub spaces: usize,
    pub cars: usize,
    pub sequences: usize,
}

/// Reads and validates a JSON Lines annotation file.
pub fn ingest_annotations(path: &Path, opts: IngestOptions) -> Result<IngestReport, DatasetError> {
    let file = File::open(path)?;
    ingest_reader(BufReader::new(file), opts)
}

/// Same as [`ingest_annotations`] over any buffered reader.
pub fn ingest_reader<R: BufRead>(reader: R, opts: IngestOptions) -> Result<IngestReport, DatasetError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obs: SpaceObservation = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push((line_no, obs));
    }
    build_report(records, opts)
}

/// Validates in-memory observations. Error line numbers are 1-based
/// positions in the iterator.
pub fn sequences_from_observations<I>(observations: I, opts: IngestOptions) -> Result<IngestReport, DatasetError>
where
    I: IntoIterator<Item = SpaceObservation>,
{
    let records = observations.into_iter().enumerate().map(|(i, o)| (i + 1, o)).collect();
    build_report(records, opts)
}

fn build_report(records: Vec<(usize, SpaceObservation)>, opts: IngestOptions) -> Result<IngestReport, DatasetError> {
    if opts.interval_k <= 0 {
        return Err(DatasetError::InvalidInterval(opts.interval_k));
    }
    let observations = records.len();
    let mut cars = HashSet::new();
    let mut by_space: BTreeMap<(String, String), Vec<(usize, SpaceObservation)>> = BTreeMap::new();
    for (line, obs) in records {
        if obs.timestamp < 0 {
            return Err(DatasetError::NegativeTimestamp {
                line,
                timestamp: obs.timestamp,
            });
        }
        if obs.status == Status::Empty {
            if let Some(car) = &obs.car_id {
                return Err(DatasetError::EmptyWithCar {
                    line,
                    car_id: car.clone(),
                });
            }
        }
        if let Some(car) = &obs.car_id {
            cars.insert(car.clone());
        }
        by_space
            .entry((obs.camera_id.clone(), obs.space_id.clone()))
            .or_default()
            .push((line, obs));
    }

    let spaces = by_space.len();
    let mut sequences = Vec::new();
    for ((camera_id, space_id), mut obs) in by_space {
        obs.sort_by_key(|(line, o)| (o.timestamp, *line));
        let mut current: Vec<SpaceObservation> = Vec::new();
        for (line, o) in obs {
            if let Some(prev) = current.last() {
                let gap = o.timestamp - prev.timestamp;
                if gap == 0 {
                    return Err(DatasetError::Duplicate {
                        line,
                        camera_id,
                        space_id,
                        timestamp: o.timestamp,
                    });
                }
                if gap != opts.interval_k {
                    if gap % opts.interval_k != 0 {
                        return Err(DatasetError::NonUniformSpacing {
                            line,
                            camera_id,
                            space_id,
                            prev_ts: prev.timestamp,
                            timestamp: o.timestamp,
                            interval_k: opts.interval_k,
                        });
                    }
                    if !opts.split_on_gap {
                        return Err(DatasetError::GapNotAllowed {
                            line,
                            camera_id,
                            space_id,
                            gap,
                        });
                    }
                    sequences.push(SpaceSequence {
                        camera_id: camera_id.clone(),
                        space_id: space_id.clone(),
                        interval_k: opts.interval_k,
                        observations: std::mem::take(&mut current),
                    });
                }
            }
            current.push(o);
        }
        if !current.is_empty() {
            sequences.push(SpaceSequence {
                camera_id,
                space_id,
                interval_k: opts.interval_k,
                observations: current,
            });
        }
    }

    Ok(IngestReport {
        sequences,
        observations,
        spaces,
        cars: cars.len(),
    })
}

/// Checks the [`SpaceSequence`] invariants without re-grouping.
pub fn validate_sequence(seq: &SpaceSequence) -> Result<(), DatasetError> {
    if seq.interval_k <= 0 {
        return Err(DatasetError::InvalidInterval(seq.interval_k));
    }
    for (i, o) in seq.observations.iter().enumerate() {
        let line = i + 1;
        if o.camera_id != seq.camera_id || o.space_id != seq.space_id {
            return Err(DatasetError::Malformed {
                line,
                message: format!(
                    "observation of ({}, {}) inside sequence of ({}, {})",
                    o.camera_id, o.space_id, seq.camera_id, seq.space_id
                ),
            });
        }
        if o.timestamp < 0 {
            return Err(DatasetError::NegativeTimestamp {
                line,
                timestamp: o.timestamp,
            });
        }
        if o.status == Status::Empty {
            if let Some(car) = &o.car_id {
                return Err(DatasetError::EmptyWithCar {
                    line,
                    car_id: car.clone(),
                });
            }
        }
        if i > 0 {
            let prev = seq.observations[i - 1].timestamp;
            if o.timestamp - prev != seq.interval_k {
                return Err(DatasetError::NonUniformSpacing {
                    line,
                    camera_id: seq.camera_id.clone(),
                    space_id: seq.space_id.clone(),
                    prev_ts: prev,
                    timestamp: o.timestamp,
                    interval_k: seq.interval_k,
                });
            }
        }
    }
    Ok(())
}

/// Writes sequences back out in the annotation format.
pub fn write_annotations<W: Write>(mut out: W, sequences: &[SpaceSequence]) -> Result<(), DatasetError> {
    for seq in sequences {
        for obs in &seq.observations {
            serde_json::to_writer(&mut out, obs).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// One stay per maximal run of consecutive frames sharing a `car_id`.
///
/// Occupied frames without a `car_id` break runs but produce no stay. A car
/// returning to the same space after leaving yields a second stay.
pub fn derive_ground_truth(seq: &SpaceSequence) -> Vec<GroundTruthStay> {
    let mut stays = Vec::new();
    let mut run: Option<(&str, i64, i64)> = None;
    let k = seq.interval_k;

    let close = |run: Option<(&str, i64, i64)>, stays: &mut Vec<GroundTruthStay>| {
        if let Some((car, first, last)) = run {
            stays.push(GroundTruthStay {
                camera_id: seq.camera_id.clone(),
                space_id: seq.space_id.clone(),
                first_ts: first,
                last_ts: last,
                car_id: car.to_owned(),
                dwell_seconds: last - first,
            });
        }
    };

    for obs in &seq.observations {
        let car = match (obs.status, obs.car_id.as_deref()) {
            (Status::Occupied, Some(car)) => Some(car),
            _ => None,
        };
        run = match (run, car) {
            (Some((cur, first, last)), Some(car)) if cur == car && obs.timestamp - last == k => {
                Some((cur, first, obs.timestamp))
            }
            (prev, Some(car)) => {
                close(prev, &mut stays);
                Some((car, obs.timestamp, obs.timestamp))
            }
            (prev, None) => {
                close(prev, &mut stays);
                None
            }
        };
    }
    close(run, &mut stays);
    stays
}

/// Ground truth for a whole dataset, in canonical order.
pub fn derive_all_ground_truth(sequences: &[SpaceSequence]) -> Vec<GroundTruthStay> {
    let mut stays: Vec<_> = sequences.iter().flat_map(derive_ground_truth).collect();
    stays.sort();
    stays
}

/// Train/validation partition produced by [`split_by_days`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DaySplit {
    pub train: Vec<SpaceSequence>,
    pub validation: Vec<SpaceSequence>,
    pub warnings: Vec<String>,
}

/// Calendar day index of a timestamp under a UTC offset.
pub fn day_of(timestamp: i64, utc_offset_seconds: i64) -> i64 {
    (timestamp + utc_offset_seconds).div_euclid(SECONDS_PER_DAY)
}

/// Per camera, the first `ceil(train_fraction·D)` calendar days go to train
/// and the rest to validation.
///
/// Sequences crossing midnight are cut at the day boundary, so no day
/// contributes to both sides.
pub fn split_by_days(
    sequences: &[SpaceSequence],
    train_fraction: f64,
    utc_offset_seconds: i64,
) -> Result<DaySplit, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }

    let mut days: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
    for seq in sequences {
        let set = days.entry(seq.camera_id.as_str()).or_default();
        for o in &seq.observations {
            set.insert(day_of(o.timestamp, utc_offset_seconds));
        }
    }

    let mut split = DaySplit::default();
    let mut last_train_day: BTreeMap<&str, i64> = BTreeMap::new();
    for (camera, set) in &days {
        let total = set.len();
        // Guard against 0.7 * 10 landing a hair above 7.
        let n_train = ((train_fraction * total as f64) - 1e-9).ceil().max(1.0) as usize;
        let n_train = n_train.min(total);
        if n_train == total {
            split
                .warnings
                .push(format!("camera {camera}: {total} day(s), validation split is empty"));
        }
        let boundary = *set.iter().nth(n_train - 1).expect("n_train >= 1");
        last_train_day.insert(camera, boundary);
    }

    for seq in sequences {
        let boundary = last_train_day[seq.camera_id.as_str()];
        let mut chunk: Vec<SpaceObservation> = Vec::new();
        let mut chunk_day = None;
        let flush = |chunk: &mut Vec<SpaceObservation>, day: Option<i64>, split: &mut DaySplit| {
            if chunk.is_empty() {
                return;
            }
            let part = SpaceSequence {
                camera_id: seq.camera_id.clone(),
                space_id: seq.space_id.clone(),
                interval_k: seq.interval_k,
                observations: std::mem::take(chunk),
            };
            if day.expect("chunk has a day") <= boundary {
                split.train.push(part);
            } else {
                split.validation.push(part);
            }
        };
        for o in &seq.observations {
            let d = day_of(o.timestamp, utc_offset_seconds);
            if chunk_day != Some(d) {
                flush(&mut chunk, chunk_day, &mut split);
                chunk_day = Some(d);
            }
            chunk.push(o.clone());
        }
        flush(&mut chunk, chunk_day, &mut split);
    }

    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok(split)
}

/// Image references per ground-truth car, for pair generation.
pub fn car_refs(sequences: &[SpaceSequence]) -> BTreeMap<String, Vec<String>> {
    let mut cars: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for seq in sequences {
        for o in &seq.observations {
            if let (Status::Occupied, Some(car)) = (o.status, &o.car_id) {
                let refs = cars.entry(car.clone()).or_default();
                let key = o.key();
                if !refs.contains(&key) {
                    refs.push(key);
                }
            }
        }
    }
    cars
}

#[derive(Debug, Deserialize, Serialize)]
struct ScoreRow {
    key: String,
    score: f64,
    #[serde(default)]
    label: Option<Label>,
}

/// Reads a `key,score[,label]` CSV.
pub fn read_scores<R: Read>(reader: R) -> Result<Vec<ScoreRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DatasetError::Scores(e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["key", "score"] && names != ["key", "score", "label"] {
        return Err(DatasetError::Scores(format!(
            "expected header key,score[,label], got {}",
            names.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DatasetError::Scores(format!("line {line}: {e}"))
        })?;
        if !row.score.is_finite() {
            return Err(DatasetError::Scores(format!(
                "key {}: score {} is not finite",
                row.key, row.score
            )));
        }
        out.push(ScoreRecord {
            key: row.key,
            score: row.score,
            label: row.label,
        });
    }
    Ok(out)
}

pub fn read_scores_file(path: &Path) -> Result<Vec<ScoreRecord>, DatasetError> {
    read_scores(File::open(path)?)
}

/// Writes scores; the label column is emitted only if every record has one.
pub fn write_scores<W: Write>(out: W, records: &[ScoreRecord]) -> Result<(), DatasetError> {
    let labeled = !records.is_empty() && records.iter().all(|r| r.label.is_some());
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| DatasetError::Scores(e.to_string());
    if labeled {
        w.write_record(["key", "score", "label"]).map_err(err)?;
    } else {
        w.write_record(["key", "score"]).map_err(err)?;
    }
    for r in records {
        let score = r.score.to_string();
        if labeled {
            let label = match r.label {
                Some(Label::Positive) => "pos",
                _ => "neg",
            };
            w.write_record([r.key.as_str(), score.as_str(), label]).map_err(err)?;
        } else {
            w.write_record([r.key.as_str(), score.as_str()]).map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}
