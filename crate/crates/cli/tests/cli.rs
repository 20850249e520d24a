use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parkdwell::dataset::{ingest_annotations, write_scores, IngestOptions};
use parkdwell::model::pair_key;
use parkdwell::{Label, ScoreRecord, SpaceSequence, Status};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parkdwell"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_lot(path: impl AsRef<Path>, k: i64) -> Vec<SpaceSequence> {
    let opts = IngestOptions {
        interval_k: k,
        split_on_gap: true,
    };
    ingest_annotations(path.as_ref(), opts).unwrap().sequences
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Self(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> String {
        self.0.path().join(name).to_string_lossy().into_owned()
    }

    fn file(&self, dir: &str, name: &str) -> PathBuf {
        self.0.path().join(dir).join(name)
    }
}

/// Small generated lot, returns the annotations path.
fn lot(d: &Dir, seed: &str) -> String {
    ok(&[
        "--seed",
        seed,
        "--output-dir",
        &d.path("gen"),
        "generate",
        "--n-spaces",
        "12",
        "--horizon-frames",
        "60",
    ]);
    d.file("gen", "annotations.jsonl").to_string_lossy().into_owned()
}

#[test]
fn oracle_chain_is_perfect() {
    let d = Dir::new();
    let ann = lot(&d, "4");
    ok(&["--output-dir", &d.path("ing"), "ingest", "--annotations", &ann]);
    let ing = json(d.file("ing", "ingest.json"));
    assert_eq!(ing["summary"]["spaces"], 12);
    assert_eq!(ing["summary"]["observations"], 720);

    ok(&["--output-dir", &d.path("trk"), "track", "--annotations", &ann]);
    let eps = d.file("trk", "episodes.jsonl");
    let stdout = ok(&[
        "--output-dir",
        &d.path("ev"),
        "evaluate",
        "--annotations",
        &ann,
        "--episodes",
        eps.to_str().unwrap(),
    ]);
    let rep = json(d.file("ev", "report.json"));
    assert_eq!(rep["mae_seconds"], 0.0);
    assert_eq!(rep["rmse_seconds"], 0.0);
    assert_eq!(rep["perfect_fraction"], 1.0);
    assert!(stdout.contains("MAE"));
    let hist = std::fs::read_to_string(d.file("ev", "histogram.csv")).unwrap();
    assert!(hist.lines().count() > 1);
}

#[test]
fn train_validation_split_partitions_sequences() {
    let d = Dir::new();
    // 200 frames at 30 min each span several days
    ok(&[
        "--output-dir",
        &d.path("gen"),
        "generate",
        "--n-spaces",
        "5",
        "--horizon-frames",
        "200",
        "--k-seconds",
        "1800",
    ]);
    let ann = d.file("gen", "annotations.jsonl");
    ok(&[
        "--output-dir",
        &d.path("ing"),
        "ingest",
        "--annotations",
        ann.to_str().unwrap(),
        "--interval",
        "1800",
        "--train-fraction",
        "0.5",
    ]);
    let frames = |name: &str| -> usize {
        read_lot(d.file("ing", name), 1800)
            .iter()
            .map(|s| s.observations.len())
            .sum()
    };
    let split = &json(d.file("ing", "ingest.json"))["split"];
    assert!(split["train_sequences"].as_u64().unwrap() > 0);
    assert!(split["validation_sequences"].as_u64().unwrap() > 0);
    assert!(frames("train.jsonl") > 0 && frames("validation.jsonl") > 0);
    assert_eq!(frames("train.jsonl") + frames("validation.jsonl"), 5 * 200);
}

#[test]
fn scored_backends_from_calibrated_thresholds() {
    let d = Dir::new();
    let ann = lot(&d, "8");
    let seqs = read_lot(&ann, 300);

    // well separated scores with one overlapping negative on each side
    let mut occ = Vec::new();
    let mut pairs = Vec::new();
    for s in &seqs {
        for (i, o) in s.observations.iter().enumerate() {
            let pos = o.status == Status::Occupied;
            occ.push(ScoreRecord {
                key: o.key(),
                score: if pos { 0.9 } else { 0.1 },
                label: Some(if pos { Label::Positive } else { Label::Negative }),
            });
            if i > 0 {
                let p = &s.observations[i - 1];
                if pos && p.status == Status::Occupied {
                    let same = p.car_id == o.car_id;
                    pairs.push(ScoreRecord {
                        key: pair_key(p, o),
                        score: if same { 0.2 } else { 1.5 },
                        label: Some(if same { Label::Positive } else { Label::Negative }),
                    });
                }
            }
        }
    }
    // the lot needs both kinds of pair for a calibration
    pairs.push(ScoreRecord {
        key: "unused".into(),
        score: 1.5,
        label: Some(Label::Negative),
    });
    let occ_path = d.path("occ.csv");
    let pair_path = d.path("pair.csv");
    write_scores(std::fs::File::create(&occ_path).unwrap(), &occ).unwrap();
    write_scores(std::fs::File::create(&pair_path).unwrap(), &pairs).unwrap();

    ok(&[
        "--output-dir",
        &d.path("cal-occ"),
        "calibrate",
        "--scores",
        &occ_path,
        "--method",
        "eer",
    ]);
    ok(&[
        "--output-dir",
        &d.path("cal-pair"),
        "calibrate",
        "--scores",
        &pair_path,
        "--method",
        "far-cap",
        "--cap",
        "0.05",
    ]);
    let cal = json(d.file("cal-pair", "calibration.json"));
    assert!(cal["far"].as_f64().unwrap() <= 0.05);
    assert_eq!(cal["polarity"], "distance");
    let t = cal["threshold"].as_f64().unwrap();
    assert!((0.2..1.5).contains(&t), "{t}");
    let occ_t = json(d.file("cal-occ", "calibration.json"))["threshold"]
        .as_f64()
        .unwrap();
    assert!((0.1..=0.9).contains(&occ_t) && occ_t > 0.1, "{occ_t}");

    ok(&[
        "--output-dir",
        &d.path("trk"),
        "track",
        "--annotations",
        &ann,
        "--classifier",
        "scored",
        "--occupancy-scores",
        &occ_path,
        "--occupancy-calibration",
        d.file("cal-occ", "calibration.json").to_str().unwrap(),
        "--comparator",
        "scored",
        "--pair-scores",
        &pair_path,
        "--pair-calibration",
        d.file("cal-pair", "calibration.json").to_str().unwrap(),
    ]);
    let eps = d.file("trk", "episodes.jsonl");
    ok(&[
        "--output-dir",
        &d.path("ev"),
        "evaluate",
        "--annotations",
        &ann,
        "--episodes",
        eps.to_str().unwrap(),
    ]);
    assert_eq!(json(d.file("ev", "report.json"))["perfect_fraction"], 1.0);

    // the occupancy calibration has the wrong polarity for pairs
    let out = run(&[
        "--output-dir",
        &d.path("bad"),
        "track",
        "--annotations",
        &ann,
        "--comparator",
        "scored",
        "--pair-scores",
        &pair_path,
        "--pair-calibration",
        d.file("cal-occ", "calibration.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("polarity"));
}

#[test]
fn simulate_two_point_sweep() {
    let d = Dir::new();
    let stdout = ok(&[
        "--output-dir",
        &d.path("sim"),
        "simulate",
        "--preset",
        "pklot",
        "--n-spaces",
        "20",
        "--axis",
        "p_occ_as_empty",
        "--values",
        "0.076,0",
        "--seeds",
        "3",
    ]);
    assert!(stdout.contains("p_occ_as_empty"));
    let csv = std::fs::read_to_string(d.file("sim", "sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,value,seed,mae,rmse,perfect_fraction");
    assert_eq!(lines.len(), 1 + 2 * 3);
    let sweep = json(d.file("sim", "sweep.json"));
    let points = sweep["points"].as_array().unwrap();
    assert_eq!(points[0]["value"], 0.0);
    assert_eq!(points[1]["value"], 0.076);
    assert!(
        points[0]["mean_perfect_fraction"].as_f64().unwrap() > points[1]["mean_perfect_fraction"].as_f64().unwrap()
    );

    // explicit seeds
    ok(&[
        "--output-dir",
        &d.path("sim2"),
        "simulate",
        "--n-spaces",
        "5",
        "--axis",
        "far",
        "--values",
        "0.1",
        "--seeds",
        "7,11",
        "--explicit-seeds",
    ]);
    let seeds: Vec<u64> = json(d.file("sim2", "sweep.json"))["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [7, 11]);
}

fn assert_replay_identical(d: &Dir, from: &str, files: &[&str]) {
    let to = format!("{from}-replay");
    ok(&[
        "--output-dir",
        &d.path(&to),
        "replay",
        "--run",
        d.file(from, "run.json").to_str().unwrap(),
    ]);
    for f in files {
        assert_eq!(
            std::fs::read(d.file(from, f)).unwrap(),
            std::fs::read(d.file(&to, f)).unwrap(),
            "{from}/{f}"
        );
    }
    let rec = json(d.file(&to, "run.json"));
    assert!(rec["replay_of"].as_str().unwrap().ends_with("run.json"));
}

#[test]
fn replay_reproduces_outputs() {
    let d = Dir::new();
    let ann = lot(&d, "3");
    assert_replay_identical(&d, "gen", &["annotations.jsonl"]);

    ok(&[
        "--seed",
        "12",
        "--output-dir",
        &d.path("trk"),
        "track",
        "--annotations",
        &ann,
        "--classifier",
        "noisy",
        "--comparator",
        "noisy",
        "--p-occ-as-empty",
        "0.1",
        "--far",
        "0.1",
        "--missing-car-id",
        "vacant",
    ]);
    assert_replay_identical(&d, "trk", &["episodes.jsonl"]);

    let eps = d.file("trk", "episodes.jsonl");
    ok(&[
        "--output-dir",
        &d.path("ev"),
        "evaluate",
        "--annotations",
        &ann,
        "--episodes",
        eps.to_str().unwrap(),
    ]);
    assert_replay_identical(&d, "ev", &["report.json", "histogram.csv"]);

    ok(&[
        "--seed",
        "5",
        "--output-dir",
        &d.path("pairs"),
        "pairs",
        "--annotations",
        &ann,
        "--count",
        "50",
    ]);
    assert_replay_identical(&d, "pairs", &["pairs.csv"]);

    ok(&[
        "--seed",
        "2",
        "--output-dir",
        &d.path("sim"),
        "simulate",
        "--n-spaces",
        "5",
        "--axis",
        "classifier_error",
        "--values",
        "0,0.1",
        "--seeds",
        "2",
    ]);
    assert_replay_identical(&d, "sim", &["sweep.csv", "sweep.json"]);

    // a changed input is refused
    std::fs::write(&ann, "").unwrap();
    let out = run(&[
        "--output-dir",
        &d.path("x"),
        "replay",
        "--run",
        d.file("trk", "run.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn run_record_lists_inputs_and_outputs() {
    let d = Dir::new();
    let ann = lot(&d, "1");
    ok(&[
        "--parallelism",
        "3",
        "--output-dir",
        &d.path("trk"),
        "track",
        "--annotations",
        &ann,
    ]);
    let rec = json(d.file("trk", "run.json"));
    assert_eq!(rec["command"], "track");
    assert_eq!(rec["parallelism"], 3);
    assert_eq!(rec["outputs"], serde_json::json!(["episodes.jsonl"]));
    let input = &rec["inputs"][0];
    assert_eq!(input["path"], ann.as_str());
    assert_eq!(input["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes() {
    let d = Dir::new();
    let ann = lot(&d, "6");

    // runtime failure: occupied calls on empty frames have no car
    let out = run(&[
        "--output-dir",
        &d.path("a"),
        "track",
        "--annotations",
        &ann,
        "--classifier",
        "noisy",
        "--p-empty-as-occ",
        "0.3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("hint") && err.contains("--missing-car-id vacant"), "{err}");

    let out = run(&[
        "--output-dir",
        &d.path("b"),
        "track",
        "--annotations",
        &d.path("missing.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(1));

    // usage errors
    for args in [
        vec!["simulate", "--axis", "wind_speed", "--values", "1"],
        vec!["simulate", "--axis", "far"],
        vec!["track"],
        vec!["--parallelism", "0", "track", "--annotations", &ann],
        vec!["track", "--annotations", &ann, "--classifier", "scored"],
        vec!["track", "--annotations", &ann, "--classifier", "noisy", "--far", "1.5"],
        vec!["simulate", "--axis", "n_spaces", "--values", "2.5", "--seeds", "1"],
        vec!["frobnicate"],
    ] {
        let out_dir = d.path("c");
        let mut full = vec!["--output-dir", out_dir.as_str()];
        full.extend(args.iter().copied());
        assert_eq!(run(&full).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let d = Dir::new();
    let cfg = d.path("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 9, "simulate": {"n_spaces": 4, "axis": "far", "values": [0.1, 0.2], "seeds": 2}}"#,
    )
    .unwrap();

    ok(&["--config", &cfg, "--output-dir", &d.path("a"), "simulate"]);
    let rec = json(d.file("a", "run.json"));
    assert_eq!(rec["seed"], 9);
    let a = json(d.file("a", "sweep.json"));
    assert_eq!(a["axis"], "far");
    assert_eq!(a["points"].as_array().unwrap().len(), 2);
    assert_eq!(a["base"]["n_spaces"], 4);
    assert_eq!(a["cells"][0]["seed"], 9);

    ok(&[
        "--config",
        &cfg,
        "--seed",
        "3",
        "--output-dir",
        &d.path("b"),
        "simulate",
        "--values",
        "0.3",
    ]);
    assert_eq!(json(d.file("b", "run.json"))["seed"], 3);
    let b = json(d.file("b", "sweep.json"));
    assert_eq!(b["points"].as_array().unwrap().len(), 1);
    assert_eq!(b["points"][0]["value"], 0.3);
    assert_eq!(b["cells"][0]["seed"], 3);

    // the recorded argv is the expanded one, so replay needs no config
    std::fs::remove_file(&cfg).unwrap();
    assert_replay_identical(&d, "b", &["sweep.csv", "sweep.json"]);
}
