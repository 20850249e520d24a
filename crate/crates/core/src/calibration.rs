//! Decision thresholds from labeled validation scores.
//!
//! Two score polarities are supported. With [`Polarity::Likelihood`] a
//! record is accepted (called positive) when `score >= threshold`; with
//! [`Polarity::Distance`] when `score <= threshold`. FAR is the fraction of
//! negatives accepted and FRR the fraction of positives rejected, both
//! counted exactly.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{Label, ScoreRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("calibration needs both classes, got {positives} positive and {negatives} negative records")]
    SingleClass { positives: usize, negatives: usize },
    #[error("record {key} has no label")]
    Unlabeled { key: String },
    #[error("record {key} has non-finite score")]
    NonFinite { key: String },
    #[error("FAR cap must be in (0, 1), got {0}")]
    InvalidCap(f64),
    #[error("FAR-capped calibration needs distance polarity")]
    WrongPolarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Higher score means positive.
    Likelihood,
    /// Lower score means positive.
    Distance,
}

impl Polarity {
    pub fn accepts(self, score: f64, threshold: f64) -> bool {
        match self {
            Polarity::Likelihood => score >= threshold,
            Polarity::Distance => score <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_accepts: usize,
    pub false_rejects: usize,
    pub far: f64,
    pub frr: f64,
}

/// Error rates at every distinct score, plus sentinels at -inf and +inf,
/// sorted by threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub polarity: Polarity,
    pub positives: usize,
    pub negatives: usize,
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Exact error counts at an arbitrary threshold.
    pub fn rates_at(&self, threshold: f64) -> (f64, f64) {
        // Rates are step functions of the threshold; find the point whose
        // interval contains it.
        let p = match self.polarity {
            // point i covers (t[i-1], t[i]]
            Polarity::Likelihood => {
                let i = self.points.partition_point(|p| p.threshold < threshold);
                self.points[i.min(self.points.len() - 1)]
            }
            // point i covers [t[i], t[i+1])
            Polarity::Distance => {
                let i = self.points.partition_point(|p| p.threshold <= threshold);
                self.points[i.saturating_sub(1)]
            }
        };
        (p.far, p.frr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Eer,
    FarCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    #[serde(with = "float_or_inf")]
    pub threshold: f64,
    pub far_at_threshold: f64,
    pub frr_at_threshold: f64,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Builds the ROC curve by exhaustive counting.
pub fn build_roc(scores: &[ScoreRecord], polarity: Polarity) -> Result<RocCurve, CalibrationError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in scores {
        if !r.score.is_finite() {
            return Err(CalibrationError::NonFinite { key: r.key.clone() });
        }
        match r.label {
            Some(Label::Positive) => pos.push(r.score),
            Some(Label::Negative) => neg.push(r.score),
            None => return Err(CalibrationError::Unlabeled { key: r.key.clone() }),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(CalibrationError::SingleClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (np, nn) = (pos.len(), neg.len());
    let point = |t: f64| {
        // counts of values < t and <= t
        let below = |v: &[f64]| v.partition_point(|&x| x < t);
        let at_most = |v: &[f64]| v.partition_point(|&x| x <= t);
        let (fa, fr) = match polarity {
            Polarity::Likelihood => (nn - below(&neg), below(&pos)),
            Polarity::Distance => (at_most(&neg), np - at_most(&pos)),
        };
        RocPoint {
            threshold: t,
            false_accepts: fa,
            false_rejects: fr,
            far: fa as f64 / nn as f64,
            frr: fr as f64 / np as f64,
        }
    };

    let points = std::iter::once(f64::NEG_INFINITY)
        .chain(thresholds)
        .chain(std::iter::once(f64::INFINITY))
        .map(point)
        .collect();

    Ok(RocCurve {
        polarity,
        positives: np,
        negatives: nn,
        points,
    })
}

/// Threshold where FAR equals FRR.
///
/// Rates are constant between consecutive scores. If they are exactly
/// equal over some range of thresholds, the midpoint of that range is
/// returned. Otherwise the crossing is linearly interpolated between the
/// two bracketing points, and the reported rates are the interpolated EER.
pub fn eer_threshold(roc: &RocCurve) -> ThresholdCalibration {
    let finite: Vec<f64> = roc
        .points
        .iter()
        .map(|p| p.threshold)
        .filter(|t| t.is_finite())
        .collect();
    if finite.len() == 1 {
        let warning = "all scores are equal; EER is undefined".to_owned();
        log::warn!("{warning}");
        return ThresholdCalibration {
            threshold: finite[0],
            far_at_threshold: 0.5,
            frr_at_threshold: 0.5,
            method: Method::Eer,
            warning: Some(warning),
        };
    }

    // Work in likelihood orientation: thresholds ascending, FAR falling,
    // point i covering (t[i-1], t[i]]. A distance curve is mirrored.
    let mirror = roc.polarity == Polarity::Distance;
    let pts: Vec<RocPoint> = if mirror {
        roc.points
            .iter()
            .rev()
            .map(|p| RocPoint {
                threshold: -p.threshold,
                ..*p
            })
            .collect()
    } else {
        roc.points.clone()
    };
    let unmirror = |t: f64| if mirror { -t } else { t };

    // sign of far - frr from exact counts
    let (np, nn) = (roc.positives as u128, roc.negatives as u128);
    let diff = |p: &RocPoint| (p.false_accepts as u128 * np).cmp(&(p.false_rejects as u128 * nn));

    let mut warning = None;
    let zeros: Vec<usize> = (0..pts.len()).filter(|&i| diff(&pts[i]).is_eq()).collect();
    let (threshold, rate) = if let (Some(&lo), Some(&hi)) = (zeros.first(), zeros.last()) {
        let lower = if lo == 0 {
            f64::NEG_INFINITY
        } else {
            pts[lo - 1].threshold
        };
        let upper = pts[hi].threshold;
        let t = if lower.is_finite() {
            lower + (upper - lower) / 2.0
        } else {
            upper
        };
        (t, pts[lo].far)
    } else {
        let a = pts
            .iter()
            .rposition(|p| diff(p).is_gt())
            .expect("far > frr at the -inf sentinel");
        let b = a + 1;
        let (pa, pb) = (pts[a], pts[b]);
        let da = pa.far - pa.frr;
        let db = pb.far - pb.frr;
        let frac = da / (da - db);
        let rate = pa.far + frac * (pb.far - pa.far);
        let t = match (pa.threshold.is_finite(), pb.threshold.is_finite()) {
            (true, true) => pa.threshold + frac * (pb.threshold - pa.threshold),
            (false, _) => pb.threshold,
            (_, false) => pa.threshold,
        };
        if !(pa.threshold.is_finite() && pb.threshold.is_finite()) {
            let w = "EER crossing lies beyond the extreme score; threshold clamped".to_owned();
            log::warn!("{w}");
            warning = Some(w);
        }
        (t, rate)
    };

    ThresholdCalibration {
        threshold: unmirror(threshold),
        far_at_threshold: rate,
        frr_at_threshold: rate,
        method: Method::Eer,
        warning,
    }
}

/// Largest threshold whose counted FAR is at most `cap`.
///
/// The rates only change at score values, so the supremum is the point
/// just below the first score at which FAR would exceed the cap. If FAR
/// already exceeds the cap at the smallest score, the -inf threshold is
/// returned: nothing is accepted.
pub fn far_cap_threshold(roc: &RocCurve, cap: f64) -> Result<ThresholdCalibration, CalibrationError> {
    if !(cap > 0.0 && cap < 1.0) {
        return Err(CalibrationError::InvalidCap(cap));
    }
    if roc.polarity != Polarity::Distance {
        return Err(CalibrationError::WrongPolarity);
    }
    let n = roc.negatives as f64;
    let first_over = roc
        .points
        .iter()
        .position(|p| p.false_accepts as f64 / n > cap)
        .expect("FAR is 1 at the +inf sentinel");
    debug_assert!(first_over >= 1);
    let prev = roc.points[first_over - 1];

    if first_over == 1 {
        let warning = format!("FAR exceeds {cap} at every score; rejecting all pairs");
        log::warn!("{warning}");
        return Ok(ThresholdCalibration {
            threshold: f64::NEG_INFINITY,
            far_at_threshold: prev.far,
            frr_at_threshold: prev.frr,
            method: Method::FarCap,
            warning: Some(warning),
        });
    }

    Ok(ThresholdCalibration {
        threshold: roc.points[first_over].threshold.next_down(),
        far_at_threshold: prev.far,
        frr_at_threshold: prev.frr,
        method: Method::FarCap,
        warning: None,
    })
}

/// Calibration result as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDocument {
    pub method: Method,
    #[serde(with = "float_or_inf")]
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub cap: Option<f64>,
    pub source_file: String,
    pub polarity: Polarity,
}

impl CalibrationDocument {
    pub fn new(cal: &ThresholdCalibration, cap: Option<f64>, source_file: &str, polarity: Polarity) -> Self {
        Self {
            method: cal.method,
            threshold: cal.threshold,
            far: cal.far_at_threshold,
            frr: cal.frr_at_threshold,
            cap,
            source_file: source_file.to_owned(),
            polarity,
        }
    }
}

/// JSON has no infinities; they are written as the strings `"inf"` and
/// `"-inf"`.
mod float_or_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad threshold {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(pos: &[f64], neg: &[f64]) -> Vec<ScoreRecord> {
        let mk = |s: f64, l, i: usize| ScoreRecord {
            key: format!("r{i}"),
            score: s,
            label: Some(l),
        };
        pos.iter()
            .enumerate()
            .map(|(i, &s)| mk(s, Label::Positive, i))
            .chain(
                neg.iter()
                    .enumerate()
                    .map(|(i, &s)| mk(s, Label::Negative, i + pos.len())),
            )
            .collect()
    }

    #[test]
    fn separable_likelihood_scores() {
        let roc = build_roc(&recs(&[0.9, 0.8], &[0.1, 0.2]), Polarity::Likelihood).unwrap();
        assert_eq!(roc.points.len(), 6);
        assert!(roc.points.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
        let eer = eer_threshold(&roc);
        assert_eq!(eer.far_at_threshold, 0.0);
        assert!((eer.threshold - 0.5).abs() < 1e-12, "{}", eer.threshold);
    }

    #[test]
    fn indistinguishable_scores() {
        let roc = build_roc(&recs(&[0.6], &[0.6]), Polarity::Likelihood).unwrap();
        assert!(!roc.points.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
        let eer = eer_threshold(&roc);
        assert_eq!(
            (eer.threshold, eer.far_at_threshold, eer.frr_at_threshold),
            (0.6, 0.5, 0.5)
        );
        assert!(eer.warning.is_some());
    }

    #[test]
    fn exact_equal_rates_are_not_interpolated() {
        // At t = 0.5 (and anywhere in (0.4, 0.5]) far = frr = 1/4.
        let roc = build_roc(
            &recs(&[0.3, 0.5, 0.7, 0.9], &[0.1, 0.2, 0.4, 0.6]),
            Polarity::Likelihood,
        )
        .unwrap();
        let eer = eer_threshold(&roc);
        assert_eq!(eer.far_at_threshold, 0.25);
        assert_eq!(eer.frr_at_threshold, 0.25);
        assert!((eer.threshold - 0.45).abs() < 1e-12);
        let (far, frr) = roc.rates_at(eer.threshold);
        assert_eq!((far, frr), (0.25, 0.25));
    }

    #[test]
    fn interpolated_crossing() {
        // pos {0.5, 0.7}, neg {0.2, 0.6, 0.8}
        // t=0.6: far 2/3, frr 1/2 ; t=0.7: far 1/3, frr 1/2
        // d = 1/6 then -1/6 -> halfway, t = 0.65, eer 1/2
        let roc = build_roc(&recs(&[0.5, 0.7], &[0.2, 0.6, 0.8]), Polarity::Likelihood).unwrap();
        let eer = eer_threshold(&roc);
        assert!((eer.threshold - 0.65).abs() < 1e-12);
        assert!((eer.far_at_threshold - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distance_eer_mirrors_likelihood() {
        let pos = [0.5, 0.7];
        let neg = [0.2, 0.6, 0.8];
        let lik = eer_threshold(&build_roc(&recs(&pos, &neg), Polarity::Likelihood).unwrap());
        let npos: Vec<f64> = pos.iter().map(|x| -x).collect();
        let nneg: Vec<f64> = neg.iter().map(|x| -x).collect();
        let dist = eer_threshold(&build_roc(&recs(&npos, &nneg), Polarity::Distance).unwrap());
        assert!((lik.threshold + dist.threshold).abs() < 1e-12);
        assert_eq!(lik.far_at_threshold, dist.far_at_threshold);
    }

    #[test]
    fn far_cap_separable_distances() {
        let roc = build_roc(&recs(&[0.1, 0.2, 0.3], &[0.8, 0.85, 0.9, 1.2]), Polarity::Distance).unwrap();
        let cal = far_cap_threshold(&roc, 0.05).unwrap();
        assert_eq!(cal.threshold, 0.8f64.next_down());
        assert!(cal.threshold < 0.8 && cal.threshold > 0.79999);
        assert_eq!(cal.far_at_threshold, 0.0);
        assert_eq!(cal.frr_at_threshold, 0.0);
    }

    #[test]
    fn far_cap_uniform_negatives_by_counting() {
        // 100 negative distances (i + 0.5)/100, cap 0.05 -> 5 accepts allowed,
        // supremum just below the 6th smallest negative.
        let neg: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let roc = build_roc(&recs(&[0.01], &neg), Polarity::Distance).unwrap();
        let cal = far_cap_threshold(&roc, 0.05).unwrap();
        assert!(cal.threshold >= neg[4] && cal.threshold < neg[5]);
        let accepted = neg.iter().filter(|&&d| d <= cal.threshold).count();
        assert_eq!(accepted, 5);
        assert_eq!(cal.far_at_threshold, 0.05);
    }

    #[test]
    fn far_cap_small_negative_set_admits_none() {
        // floor(0.05 * 10) = 0 false accepts allowed
        let neg: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let roc = build_roc(&recs(&[0.05, 0.5], &neg), Polarity::Distance).unwrap();
        let cal = far_cap_threshold(&roc, 0.05).unwrap();
        assert_eq!(neg.iter().filter(|&&d| d <= cal.threshold).count(), 0);
        assert_eq!(cal.threshold, 0.1f64.next_down());
        assert_eq!(cal.frr_at_threshold, 0.5);

        // smallest score is itself a negative: reject everything
        let roc = build_roc(&recs(&[0.5], &neg), Polarity::Distance).unwrap();
        let cal = far_cap_threshold(&roc, 0.05).unwrap();
        assert_eq!(cal.threshold, f64::NEG_INFINITY);
        assert!(cal.warning.is_some());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_roc(&recs(&[0.1], &[]), Polarity::Likelihood),
            Err(CalibrationError::SingleClass {
                positives: 1,
                negatives: 0
            })
        ));
        let unlabeled = [ScoreRecord {
            key: "x".into(),
            score: 0.1,
            label: None,
        }];
        assert!(matches!(
            build_roc(&unlabeled, Polarity::Likelihood),
            Err(CalibrationError::Unlabeled { .. })
        ));
        let roc = build_roc(&recs(&[0.1], &[0.2]), Polarity::Distance).unwrap();
        assert!(matches!(
            far_cap_threshold(&roc, 0.0),
            Err(CalibrationError::InvalidCap(_))
        ));
        assert!(matches!(
            far_cap_threshold(&roc, 1.0),
            Err(CalibrationError::InvalidCap(_))
        ));
        let lik = build_roc(&recs(&[0.1], &[0.2]), Polarity::Likelihood).unwrap();
        assert!(matches!(
            far_cap_threshold(&lik, 0.05),
            Err(CalibrationError::WrongPolarity)
        ));
    }

    #[test]
    fn document_json_handles_infinite_threshold() {
        let doc = CalibrationDocument {
            method: Method::FarCap,
            threshold: f64::NEG_INFINITY,
            far: 0.0,
            frr: 1.0,
            cap: Some(0.05),
            source_file: "val.csv".into(),
            polarity: Polarity::Distance,
        };
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains(r#""threshold":"-inf""#), "{json}");
        assert!(json.contains(r#""method":"far-cap""#));
        let back: CalibrationDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back, doc);
    }
}
