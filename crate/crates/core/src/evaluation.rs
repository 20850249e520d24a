//! Scoring predicted episodes against ground-truth stays.
//!
//! Each predicted episode is assigned to the stay of the same space whose
//! interval contains the episode's start. The earliest episode of a stay is
//! compared with the true dwell; later fragments of the same stay are
//! compared with zero, as are episodes that start outside every stay. A
//! stay with no episode is compared against a prediction of zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GroundTruthStay, PredictedEpisode};

/// Bin width used by default for dwell histograms: 30 minutes.
pub const DEFAULT_BIN_WIDTH: i64 = 1800;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("ground-truth stays overlap in ({camera_id}, {space_id}) at {timestamp}")]
    OverlappingStays {
        camera_id: String,
        space_id: String,
        timestamp: i64,
    },
    #[error("total number of cars must be positive")]
    NoCars,
    #[error("no comparison records to score")]
    NoRecords,
    #[error("histogram bin width must be positive, got {0}")]
    InvalidBinWidth(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonKind {
    MatchedFirst,
    ExtraFragment,
    MissedCar,
    Spurious,
}

/// One term of the error sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub y_seconds: i64,
    pub yhat_seconds: i64,
    pub kind: ComparisonKind,
}

impl ComparisonRecord {
    pub fn new(y_seconds: i64, yhat_seconds: i64, kind: ComparisonKind) -> Self {
        Self {
            y_seconds,
            yhat_seconds,
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub matched_first: usize,
    pub extra_fragment: usize,
    pub missed_car: usize,
    pub spurious: usize,
}

impl KindCounts {
    fn bump(&mut self, kind: ComparisonKind) {
        match kind {
            ComparisonKind::MatchedFirst => self.matched_first += 1,
            ComparisonKind::ExtraFragment => self.extra_fragment += 1,
            ComparisonKind::MissedCar => self.missed_car += 1,
            ComparisonKind::Spurious => self.spurious += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.matched_first + self.extra_fragment + self.missed_car + self.spurious
    }
}

/// Counts of ground-truth and predicted dwells in `[bin_start, bin_start + bin_width)`.
/// A `bin_width` of 0 marks the final open-ended bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: i64,
    pub bin_width: i64,
    pub gt_count: usize,
    pub pred_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_seconds: f64,
    pub rmse_seconds: f64,
    pub perfect_fraction: f64,
    /// Number of records entering the error sums.
    pub n: usize,
    pub total_cars: usize,
    pub counts: KindCounts,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bin_width: i64,
    /// Start of the open-ended final histogram bin, rounded up to a bin
    /// boundary. Without it bins extend to the largest dwell.
    pub hist_max: Option<i64>,
    /// Leave spurious episodes out of the error sums.
    pub exclude_spurious: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bin_width: DEFAULT_BIN_WIDTH,
            hist_max: None,
            exclude_spurious: false,
        }
    }
}

type SpaceKey<'a> = (&'a str, &'a str);

pub fn match_episodes(
    stays: &[GroundTruthStay],
    episodes: &[PredictedEpisode],
) -> Result<Vec<ComparisonRecord>, EvalError> {
    let mut by_space: BTreeMap<SpaceKey<'_>, (Vec<&GroundTruthStay>, Vec<&PredictedEpisode>)> = BTreeMap::new();
    for s in stays {
        by_space.entry((&s.camera_id, &s.space_id)).or_default().0.push(s);
    }
    for e in episodes {
        by_space.entry((&e.camera_id, &e.space_id)).or_default().1.push(e);
    }

    let mut records = Vec::with_capacity(stays.len() + episodes.len());
    for ((camera, space), (mut st, mut ep)) in by_space {
        st.sort_by_key(|s| s.first_ts);
        ep.sort_by_key(|e| e.start_ts);
        for w in st.windows(2) {
            if w[1].first_ts <= w[0].last_ts {
                return Err(EvalError::OverlappingStays {
                    camera_id: camera.to_owned(),
                    space_id: space.to_owned(),
                    timestamp: w[1].first_ts,
                });
            }
        }

        // (time, record) so the output reads chronologically per space
        let mut local: Vec<(i64, ComparisonRecord)> = Vec::new();
        let mut assigned: Vec<Vec<&PredictedEpisode>> = vec![Vec::new(); st.len()];
        for e in ep {
            let idx = st.partition_point(|s| s.first_ts <= e.start_ts);
            match idx.checked_sub(1) {
                Some(i) if e.start_ts <= st[i].last_ts => assigned[i].push(e),
                _ => local.push((
                    e.start_ts,
                    ComparisonRecord::new(0, e.dwell_seconds, ComparisonKind::Spurious),
                )),
            }
        }
        for (stay, eps) in st.iter().zip(assigned) {
            match eps.split_first() {
                None => local.push((
                    stay.first_ts,
                    ComparisonRecord::new(stay.dwell_seconds, 0, ComparisonKind::MissedCar),
                )),
                Some((first, rest)) => {
                    local.push((
                        first.start_ts,
                        ComparisonRecord::new(stay.dwell_seconds, first.dwell_seconds, ComparisonKind::MatchedFirst),
                    ));
                    for e in rest {
                        local.push((
                            e.start_ts,
                            ComparisonRecord::new(0, e.dwell_seconds, ComparisonKind::ExtraFragment),
                        ));
                    }
                }
            }
        }
        local.sort_by_key(|(t, _)| *t);
        records.extend(local.into_iter().map(|(_, r)| r));
    }
    Ok(records)
}

/// MAE, RMSE and the fraction of cars whose first prediction is exact.
///
/// The returned report has an empty histogram; see [`evaluate`].
pub fn compute_metrics(
    records: &[ComparisonRecord],
    total_cars: usize,
    exclude_spurious: bool,
) -> Result<EvalReport, EvalError> {
    if total_cars == 0 {
        return Err(EvalError::NoCars);
    }
    let mut counts = KindCounts::default();
    let mut abs_sum: i128 = 0;
    let mut sq_sum: i128 = 0;
    let mut n = 0usize;
    let mut perfect = 0usize;
    for r in records {
        counts.bump(r.kind);
        if r.kind == ComparisonKind::MatchedFirst && r.y_seconds == r.yhat_seconds {
            perfect += 1;
        }
        if exclude_spurious && r.kind == ComparisonKind::Spurious {
            continue;
        }
        let d = i128::from(r.y_seconds) - i128::from(r.yhat_seconds);
        abs_sum += d.abs();
        sq_sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::NoRecords);
    }
    let mae = abs_sum as f64 / n as f64;
    let rmse = (sq_sum as f64 / n as f64).sqrt();
    Ok(EvalReport {
        mae_seconds: mae,
        rmse_seconds: rmse,
        perfect_fraction: perfect as f64 / total_cars as f64,
        n,
        total_cars,
        counts,
        histogram: Vec::new(),
    })
}

/// Ground-truth and predicted dwell counts per bin `[i·w, (i+1)·w)`.
pub fn dwell_histogram(
    stays: &[GroundTruthStay],
    episodes: &[PredictedEpisode],
    bin_width: i64,
    hist_max: Option<i64>,
) -> Result<Vec<HistogramBin>, EvalError> {
    if bin_width <= 0 {
        return Err(EvalError::InvalidBinWidth(bin_width));
    }
    let gt = stays.iter().map(|s| s.dwell_seconds);
    let pred = episodes.iter().map(|e| e.dwell_seconds);

    let (regular, open_ended) = match hist_max {
        Some(max) => ((max.max(0) + bin_width - 1) / bin_width, true),
        None => {
            let largest = gt.clone().chain(pred.clone()).max().unwrap_or(0).max(0);
            (largest / bin_width + 1, false)
        }
    };
    let regular = regular as usize;
    let mut bins: Vec<HistogramBin> = (0..regular)
        .map(|i| HistogramBin {
            bin_start: i as i64 * bin_width,
            bin_width,
            gt_count: 0,
            pred_count: 0,
        })
        .collect();
    if open_ended {
        bins.push(HistogramBin {
            bin_start: regular as i64 * bin_width,
            bin_width: 0,
            gt_count: 0,
            pred_count: 0,
        });
    }
    let last = bins.len() - 1;
    let slot = |d: i64| ((d.max(0) / bin_width) as usize).min(last);
    for d in gt {
        bins[slot(d)].gt_count += 1;
    }
    for d in pred {
        bins[slot(d)].pred_count += 1;
    }
    Ok(bins)
}

/// Matching, metrics and histogram in one call.
pub fn evaluate(
    stays: &[GroundTruthStay],
    episodes: &[PredictedEpisode],
    opts: EvalOptions,
) -> Result<EvalReport, EvalError> {
    let records = match_episodes(stays, episodes)?;
    let mut report = compute_metrics(&records, stays.len(), opts.exclude_spurious)?;
    report.histogram = dwell_histogram(stays, episodes, opts.bin_width, opts.hist_max)?;
    Ok(report)
}

/// Writes the `bin_start,bin_width,gt_count,pred_count` CSV.
pub fn write_histogram_csv<W: Write>(out: W, bins: &[HistogramBin]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(b).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Plain-text rendering of a report.
pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let c = &report.counts;
    let _ = writeln!(
        s,
        "MAE               {:>12.1} s ({:.1} min)",
        report.mae_seconds,
        report.mae_seconds / 60.0
    );
    let _ = writeln!(
        s,
        "RMSE              {:>12.1} s ({:.1} min)",
        report.rmse_seconds,
        report.rmse_seconds / 60.0
    );
    let _ = writeln!(s, "perfect           {:>12.2} %", report.perfect_fraction * 100.0);
    let _ = writeln!(s, "cars (GT stays)   {:>12}", report.total_cars);
    let _ = writeln!(s, "N                 {:>12}", report.n);
    let _ = writeln!(s, "  matched first   {:>12}", c.matched_first);
    let _ = writeln!(s, "  extra fragment  {:>12}", c.extra_fragment);
    let _ = writeln!(s, "  missed car      {:>12}", c.missed_car);
    let _ = writeln!(s, "  spurious        {:>12}", c.spurious);
    if !report.histogram.is_empty() {
        let _ = writeln!(s, "\n{:>16} {:>10} {:>10}", "dwell bin (min)", "gt", "pred");
        for b in &report.histogram {
            let label = if b.bin_width == 0 {
                format!("{}+", b.bin_start / 60)
            } else {
                format!("{}-{}", b.bin_start / 60, (b.bin_start + b.bin_width) / 60)
            };
            let _ = writeln!(s, "{:>16} {:>10} {:>10}", label, b.gt_count, b.pred_count);
        }
    }
    s
}
