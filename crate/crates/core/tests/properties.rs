use std::collections::BTreeMap;

use parkdwell::calibration::{build_roc, eer_threshold, far_cap_threshold, Polarity};
use parkdwell::dataset::{derive_all_ground_truth, ingest_reader, validate_sequence, write_annotations, IngestOptions};
use parkdwell::engine::{track_dataset, track_sequence, TrackOptions};
use parkdwell::evaluation::{
    compute_metrics, dwell_histogram, evaluate, match_episodes, ComparisonKind, ComparisonRecord, EvalOptions,
};
use parkdwell::pairgen::{generate_epoch_pairs, generate_eval_pairs, CarImages};
use parkdwell::perception::{
    CarComparator, MissingIdentity, NoiseConfig, NoisyClassifier, NoisyComparator, OracleClassifier, OracleComparator,
    StatusClassifier,
};
use parkdwell::simulator::{generate_lot, DwellDistribution, SimConfig};
use parkdwell::{Label, PredictedEpisode, ScoreRecord, SpaceSequence, Status};
use proptest::prelude::*;

fn lot_config() -> impl Strategy<Value = SimConfig> {
    (
        1usize..12,
        1usize..80,
        0.0..=1.0f64,
        1.0..30.0f64,
        any::<u64>(),
        any::<bool>(),
        prop::sample::select(vec![60i64, 300, 1800]),
    )
        .prop_map(|(n_spaces, horizon, arrival, mean, seed, handover, k)| SimConfig {
            camera_id: "cam".into(),
            n_spaces,
            k_seconds: k,
            horizon_frames: horizon,
            arrival_prob: arrival,
            dwell_frames_mean: mean,
            dwell_distribution: DwellDistribution::Geometric,
            seed,
            start_ts: 1_000_000,
            allow_handover: handover,
        })
}

fn noise() -> impl Strategy<Value = NoiseConfig> {
    (0.0..0.3f64, 0.0..0.3f64, 0.0..0.3f64, 0.0..0.3f64, any::<u64>()).prop_map(|(a, b, far, frr, seed)| NoiseConfig {
        p_occ_as_empty: a,
        p_empty_as_occ: b,
        far,
        frr,
        seed,
    })
}

/// Per-frame timers exactly as the dwell-time procedure assigns them, then
/// episodes read off the timer array.
fn literal_fold(seq: &SpaceSequence, cls: &dyn StatusClassifier, cmp: &dyn CarComparator) -> Vec<PredictedEpisode> {
    let k = seq.interval_k;
    let obs = &seq.observations;
    let status: Vec<Status> = obs.iter().map(|o| cls.classify(o).unwrap()).collect();
    let mut time: Vec<Option<i64>> = vec![None; obs.len()];
    for t in 0..obs.len() {
        if status[t] == Status::Empty {
            continue;
        }
        if t == 0 || status[t - 1] == Status::Empty {
            time[t] = Some(0);
            continue;
        }
        let same = cmp.compare(&obs[t - 1], &obs[t]).unwrap() == parkdwell::perception::Verdict::Same;
        time[t] = Some(if same { time[t - 1].unwrap() + k } else { 0 });
    }
    let mut out = Vec::new();
    for t in 0..obs.len() {
        if time[t] != Some(0) {
            continue;
        }
        let mut end = t;
        while end + 1 < obs.len() && matches!(time[end + 1], Some(v) if v > 0) {
            end += 1;
        }
        let dwell = time[end].unwrap();
        out.push(PredictedEpisode {
            camera_id: seq.camera_id.clone(),
            space_id: seq.space_id.clone(),
            start_ts: obs[t].timestamp,
            end_ts: obs[t].timestamp + dwell,
            dwell_seconds: dwell,
        });
    }
    out
}

fn scores() -> impl Strategy<Value = Vec<ScoreRecord>> {
    // few distinct values so ties are common
    prop::collection::vec((0u8..20, any::<bool>()), 2..120).prop_filter_map("needs both classes", |v| {
        let pos = v.iter().filter(|(_, p)| *p).count();
        if pos == 0 || pos == v.len() {
            return None;
        }
        Some(
            v.into_iter()
                .enumerate()
                .map(|(i, (s, p))| ScoreRecord {
                    key: format!("r{i}"),
                    score: f64::from(s) / 4.0,
                    label: Some(if p { Label::Positive } else { Label::Negative }),
                })
                .collect(),
        )
    })
}

fn count_rates(scores: &[ScoreRecord], polarity: Polarity, t: f64) -> (f64, f64) {
    let (mut fa, mut fr, mut np, mut nn) = (0, 0, 0, 0);
    for r in scores {
        let acc = polarity.accepts(r.score, t);
        match r.label.unwrap() {
            Label::Positive => {
                np += 1;
                fr += usize::from(!acc);
            }
            Label::Negative => {
                nn += 1;
                fa += usize::from(acc);
            }
        }
    }
    (fa as f64 / nn as f64, fr as f64 / np as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_lots_validate_and_round_trip(cfg in lot_config()) {
        let lot = generate_lot(&cfg).unwrap();
        prop_assert_eq!(lot.len(), cfg.n_spaces);
        for s in &lot {
            validate_sequence(s).unwrap();
            prop_assert_eq!(s.observations.len(), cfg.horizon_frames);
        }
        let mut buf = Vec::new();
        write_annotations(&mut buf, &lot).unwrap();
        let back = ingest_reader(buf.as_slice(), IngestOptions { interval_k: cfg.k_seconds, split_on_gap: false }).unwrap();
        prop_assert_eq!(back.sequences, lot);
    }

    #[test]
    fn oracle_pipeline_is_perfect(cfg in lot_config()) {
        let lot = generate_lot(&cfg).unwrap();
        let stays = derive_all_ground_truth(&lot);
        prop_assume!(!stays.is_empty());
        let eps = track_dataset(&lot, &OracleClassifier, &OracleComparator::default(), TrackOptions::default(), None).unwrap();
        let r = evaluate(&stays, &eps, EvalOptions::default()).unwrap();
        prop_assert_eq!(r.mae_seconds, 0.0);
        prop_assert_eq!(r.rmse_seconds, 0.0);
        prop_assert_eq!(r.perfect_fraction, 1.0);
        prop_assert_eq!(r.counts.matched_first, stays.len());
    }

    #[test]
    fn engine_matches_literal_fold(cfg in lot_config(), nz in noise()) {
        let lot = generate_lot(&cfg).unwrap();
        let cls = NoisyClassifier::new(nz).unwrap();
        let cmp = NoisyComparator::new(nz, MissingIdentity::Vacant).unwrap();
        for s in &lot {
            prop_assert_eq!(track_sequence(s, &cls, &cmp).unwrap(), literal_fold(s, &cls, &cmp));
        }
    }

    #[test]
    fn counts_are_conserved(cfg in lot_config(), nz in noise(), excl in any::<bool>()) {
        let lot = generate_lot(&cfg).unwrap();
        let stays = derive_all_ground_truth(&lot);
        prop_assume!(!stays.is_empty());
        let cls = NoisyClassifier::new(nz).unwrap();
        let cmp = NoisyComparator::new(nz, MissingIdentity::Vacant).unwrap();
        let eps = track_dataset(&lot, &cls, &cmp, TrackOptions::default(), None).unwrap();
        let recs = match_episodes(&stays, &eps).unwrap();
        let c = compute_metrics(&recs, stays.len(), excl);
        // everything can be spurious-only when excluded
        let Ok(r) = c else { return Ok(()); };
        prop_assert_eq!(r.counts.matched_first + r.counts.missed_car, stays.len());
        prop_assert_eq!(r.counts.matched_first + r.counts.extra_fragment + r.counts.spurious, eps.len());
        let n = if excl { r.counts.total() - r.counts.spurious } else { r.counts.total() };
        prop_assert_eq!(r.n, n);
        prop_assert!(r.mae_seconds <= r.rmse_seconds * (1.0 + 1e-12));
        prop_assert!((0.0..=1.0).contains(&r.perfect_fraction));
        for rec in &recs {
            match rec.kind {
                ComparisonKind::MissedCar => prop_assert_eq!(rec.yhat_seconds, 0),
                ComparisonKind::ExtraFragment | ComparisonKind::Spurious => prop_assert_eq!(rec.y_seconds, 0),
                ComparisonKind::MatchedFirst => {}
            }
        }
        let hist = dwell_histogram(&stays, &eps, 1800, None).unwrap();
        prop_assert_eq!(hist.iter().map(|b| b.gt_count).sum::<usize>(), stays.len());
        prop_assert_eq!(hist.iter().map(|b| b.pred_count).sum::<usize>(), eps.len());
    }

    #[test]
    fn parallelism_does_not_change_output(cfg in lot_config(), nz in noise(), p in 2usize..9) {
        let lot = generate_lot(&cfg).unwrap();
        let cls = NoisyClassifier::new(nz).unwrap();
        let cmp = NoisyComparator::new(nz, MissingIdentity::Vacant).unwrap();
        let one = track_dataset(&lot, &cls, &cmp, TrackOptions::default(), None).unwrap();
        let many = track_dataset(&lot, &cls, &cmp, TrackOptions { parallelism: p, ..Default::default() }, None).unwrap();
        prop_assert_eq!(one, many);
    }

    #[test]
    fn mae_never_exceeds_rmse(recs in prop::collection::vec((0i64..100_000, 0i64..100_000), 1..50)) {
        let recs: Vec<_> = recs.into_iter().map(|(y, h)| ComparisonRecord::new(y, h, ComparisonKind::MatchedFirst)).collect();
        let r = compute_metrics(&recs, recs.len(), false).unwrap();
        prop_assert!(r.mae_seconds <= r.rmse_seconds * (1.0 + 1e-12));
    }

    #[test]
    fn roc_matches_brute_force(s in scores(), distance in any::<bool>()) {
        let polarity = if distance { Polarity::Distance } else { Polarity::Likelihood };
        let roc = build_roc(&s, polarity).unwrap();
        for p in &roc.points {
            prop_assert_eq!((p.far, p.frr), count_rates(&s, polarity, p.threshold));
        }
        // between scores and outside the range too
        for i in -2..=84 {
            let t = f64::from(i) / 16.0;
            prop_assert_eq!(roc.rates_at(t), count_rates(&s, polarity, t));
        }
    }

    #[test]
    fn far_cap_respects_cap_and_is_monotone(s in scores(), cap in 0.01..0.99f64, bump in 0.0..0.5f64) {
        let roc = build_roc(&s, Polarity::Distance).unwrap();
        let cal = far_cap_threshold(&roc, cap).unwrap();
        let (far, frr) = count_rates(&s, Polarity::Distance, cal.threshold);
        prop_assert!(far <= cap);
        prop_assert_eq!((far, frr), (cal.far_at_threshold, cal.frr_at_threshold));
        // the next score up would break the cap
        if let Some(next) = s.iter().map(|r| r.score).filter(|&x| x > cal.threshold).min_by(f64::total_cmp) {
            prop_assert!(count_rates(&s, Polarity::Distance, next).0 > cap);
        }
        let looser = far_cap_threshold(&roc, (cap + bump).min(0.999)).unwrap();
        prop_assert!(looser.threshold >= cal.threshold);
    }

    #[test]
    fn eer_lies_on_the_crossing(s in scores(), distance in any::<bool>()) {
        let polarity = if distance { Polarity::Distance } else { Polarity::Likelihood };
        let roc = build_roc(&s, polarity).unwrap();
        let cal = eer_threshold(&roc);
        prop_assert_eq!(cal.far_at_threshold, cal.frr_at_threshold);
        prop_assert!((0.0..=1.0).contains(&cal.far_at_threshold));
        // FAR - FRR changes sign (or vanishes) within one score step of the threshold
        let mut grid: Vec<f64> = s.iter().map(|r| r.score).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let below = grid.iter().rev().find(|&&g| g < cal.threshold).copied().unwrap_or(f64::NEG_INFINITY);
        let above = grid.iter().find(|&&g| g > cal.threshold).copied().unwrap_or(f64::INFINITY);
        let d = |t: f64| {
            let (fa, fr) = count_rates(&s, polarity, t);
            fa - fr
        };
        let probes = [below, cal.threshold, above];
        let signs: Vec<f64> = probes.iter().map(|&t| d(t)).collect();
        prop_assert!(
            signs.contains(&0.0) || signs.iter().any(|&v| v > 0.0) && signs.iter().any(|&v| v < 0.0),
            "no crossing near {}: {:?}", cal.threshold, signs
        );
    }

    #[test]
    fn pair_labels_hold(sizes in prop::collection::vec(1usize..6, 2..40), seed in any::<u64>()) {
        let cars: CarImages = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (format!("car{i}"), (0..n).map(|j| format!("car{i}/{j}")).collect()))
            .collect();
        let owner: BTreeMap<&str, &str> = cars
            .iter()
            .flat_map(|(c, refs)| refs.iter().map(move |r| (r.as_str(), c.as_str())))
            .collect();
        let check = |e: &parkdwell::pairgen::PairManifestEntry| {
            assert_eq!(owner[e.anchor_ref.as_str()], e.car_a);
            assert_eq!(owner[e.other_ref.as_str()], e.car_b);
            match e.label {
                Label::Positive => {
                    assert_eq!(e.car_a, e.car_b);
                    assert_ne!(e.anchor_ref, e.other_ref);
                }
                Label::Negative => assert_ne!(e.car_a, e.car_b),
            }
        };
        let eval = generate_eval_pairs(&cars, seed).unwrap();
        eval.entries.iter().for_each(check);
        let singles = sizes.iter().filter(|&&n| n == 1).count();
        prop_assert_eq!(eval.shortfall.len(), singles);
        prop_assert_eq!(eval.entries.len(), 2 * cars.len() - singles);
        if singles < sizes.len() {
            let epoch = generate_epoch_pairs(&cars, 40, seed).unwrap();
            epoch.iter().for_each(check);
            prop_assert_eq!(epoch.iter().filter(|e| e.label == Label::Positive).count(), 20);
        }
    }
}
