use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use parkdwell::calibration::{build_roc, eer_threshold, far_cap_threshold, CalibrationDocument, Method, Polarity};
use parkdwell::dataset::{
    car_refs, derive_all_ground_truth, ingest_annotations, read_scores_file, split_by_days, write_annotations,
    IngestReport,
};
use parkdwell::engine::{track_dataset, TrackOptions};
use parkdwell::evaluation::{evaluate, format_report, write_histogram_csv, EvalOptions};
use parkdwell::pairgen::{generate_epoch_pairs, generate_eval_pairs, write_manifest};
use parkdwell::perception::{
    CarComparator, MissingIdentity, NoiseConfig, NoisyClassifier, NoisyComparator, OracleClassifier, OracleComparator,
    PerceptionError, ScoreTable, ScoredClassifier, ScoredComparator, StatusClassifier,
};
use parkdwell::rng::keyed_u64;
use parkdwell::simulator::{
    generate_lot, sweep, write_sweep_csv, DwellDistribution, SimConfig, SweepAxis, SweepOptions,
};
use parkdwell::PredictedEpisode;
use serde::Serialize;

use crate::args::*;
use crate::provenance::{self, RunRecord};
use crate::usage;

/// Files a command read and wrote, for run.json.
#[derive(Default)]
struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

struct Ctx<'a> {
    cli: &'a Cli,
    io: Io,
}

impl Ctx<'_> {
    fn input(&mut self, path: &Path) -> PathBuf {
        self.io.inputs.push(path.to_owned());
        path.to_owned()
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.cli.output_dir.join(name);
        self.io.outputs.push(name.to_owned());
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn ingest(&mut self, data: &DataArgs) -> Result<IngestReport> {
        let path = self.input(&data.annotations);
        ingest_annotations(&path, data.ingest_options()).with_context(|| format!("{}", path.display()))
    }
}

/// Runs a non-replay command and records it in run.json.
pub fn run(cli: &Cli, argv: &[OsString]) -> Result<()> {
    run_recorded(cli, argv, None)
}

fn run_recorded(cli: &Cli, argv: &[OsString], replay_of: Option<PathBuf>) -> Result<()> {
    std::fs::create_dir_all(&cli.output_dir).with_context(|| format!("creating {}", cli.output_dir.display()))?;
    let mut ctx = Ctx { cli, io: Io::default() };
    match &cli.command {
        Command::Ingest(a) => ingest(&mut ctx, a)?,
        Command::Pairs(a) => pairs(&mut ctx, a)?,
        Command::Calibrate(a) => calibrate(&mut ctx, a)?,
        Command::Track(a) => track(&mut ctx, a)?,
        Command::Evaluate(a) => evaluate_cmd(&mut ctx, a)?,
        Command::Simulate(a) => simulate(&mut ctx, a)?,
        Command::Generate(a) => generate(&mut ctx, a)?,
        Command::Replay(_) => return Err(usage("replay cannot be replayed")),
    }

    let inputs = ctx
        .io
        .inputs
        .iter()
        .map(|p| provenance::hash_file(p).with_context(|| format!("hashing {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let record = RunRecord {
        tool: env!("CARGO_PKG_NAME").to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        command: cli.command.name().to_owned(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: cli.seed,
        parallelism: cli.parallelism,
        inputs,
        outputs: ctx.io.outputs,
        replay_of,
    };
    provenance::write(&cli.output_dir, &record)
}

/// Re-runs the command stored in `run_path`, writing into the current
/// `--output-dir`. Inputs must still hash to the recorded values.
pub fn replay(cli: &Cli, run_path: &Path) -> Result<()> {
    let record = provenance::read(run_path)?;
    for input in &record.inputs {
        let now = provenance::hash_file(&input.path).with_context(|| format!("input {}", input.path.display()))?;
        if now.sha256 != input.sha256 {
            bail!(
                "input {} changed since the recorded run (sha256 {} != {})",
                input.path.display(),
                now.sha256,
                input.sha256
            );
        }
    }

    let mut argv: Vec<OsString> = vec!["parkdwell".into()];
    let mut i = 0;
    while i < record.argv.len() {
        let a = &record.argv[i];
        if a == "--output-dir" {
            i += 2;
            continue;
        }
        if !a.starts_with("--output-dir=") {
            argv.push(a.into());
        }
        i += 1;
    }
    argv.insert(1, cli.output_dir.clone().into_os_string());
    argv.insert(1, "--output-dir".into());

    let replayed = Cli::try_parse_from(&argv).map_err(|e| usage(format!("run.json arguments no longer parse: {e}")))?;
    if matches!(replayed.command, Command::Replay(_)) {
        return Err(usage("run.json describes a replay"));
    }
    run_recorded(&replayed, &argv[1..], Some(run_path.to_owned()))
}

#[derive(Serialize)]
struct IngestOutput {
    summary: parkdwell::dataset::IngestSummary,
    ground_truth_stays: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitCounts>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct SplitCounts {
    train_sequences: usize,
    validation_sequences: usize,
}

fn ingest(ctx: &mut Ctx<'_>, a: &IngestArgs) -> Result<()> {
    let report = ctx.ingest(&a.data)?;
    let summary = report.summary();
    let stays = derive_all_ground_truth(&report.sequences).len();
    let mut out = IngestOutput {
        summary,
        ground_truth_stays: stays,
        split: None,
        warnings: Vec::new(),
    };
    if let Some(fraction) = a.train_fraction {
        let split = split_by_days(&report.sequences, fraction, a.utc_offset).map_err(|e| usage(e.to_string()))?;
        let mut w = ctx.create("train.jsonl")?;
        write_annotations(&mut w, &split.train)?;
        w.flush()?;
        let mut w = ctx.create("validation.jsonl")?;
        write_annotations(&mut w, &split.validation)?;
        w.flush()?;
        out.split = Some(SplitCounts {
            train_sequences: split.train.len(),
            validation_sequences: split.validation.len(),
        });
        out.warnings = split.warnings;
    }
    println!(
        "{} observations, {} spaces, {} sequences, {} cars, {} stays",
        summary.observations, summary.spaces, summary.sequences, summary.cars, stays
    );
    ctx.write_json("ingest.json", &out)
}

fn pairs(ctx: &mut Ctx<'_>, a: &PairsArgs) -> Result<()> {
    let report = ctx.ingest(&a.data)?;
    let cars = car_refs(&report.sequences);
    let entries = match a.mode {
        PairMode::Epoch => {
            let seed = keyed_u64(ctx.cli.seed, &[b"epoch", &a.epoch.to_le_bytes()]);
            generate_epoch_pairs(&cars, a.count, seed)?
        }
        PairMode::Eval => generate_eval_pairs(&cars, ctx.cli.seed)?.entries,
    };
    let mut w = ctx.create("pairs.csv")?;
    write_manifest(&mut w, &entries)?;
    w.flush()?;
    println!("{} pairs from {} cars", entries.len(), cars.len());
    Ok(())
}

fn calibrate(ctx: &mut Ctx<'_>, a: &CalibrateArgs) -> Result<()> {
    let path = ctx.input(&a.scores);
    let scores = read_scores_file(&path).with_context(|| format!("{}", path.display()))?;
    let method = Method::from(a.method);
    let polarity = a.polarity.map(Polarity::from).unwrap_or(match method {
        Method::Eer => Polarity::Likelihood,
        Method::FarCap => Polarity::Distance,
    });
    if method == Method::FarCap && polarity != Polarity::Distance {
        return Err(usage("--method far-cap needs --polarity distance"));
    }
    if method == Method::FarCap && !(a.cap > 0.0 && a.cap < 1.0) {
        return Err(usage(format!("--cap must be in (0, 1), got {}", a.cap)));
    }
    let roc = build_roc(&scores, polarity)?;
    let (cal, cap) = match method {
        Method::Eer => (eer_threshold(&roc), None),
        Method::FarCap => (far_cap_threshold(&roc, a.cap)?, Some(a.cap)),
    };
    if let Some(w) = &cal.warning {
        eprintln!("warning: {w}");
    }
    let doc = CalibrationDocument::new(&cal, cap, &path.to_string_lossy(), polarity);
    println!("threshold {} (FAR {:.4}, FRR {:.4})", doc.threshold, doc.far, doc.frr);
    ctx.write_json("calibration.json", &doc)
}

fn read_calibration(path: &Path, expect: Polarity) -> Result<f64> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: CalibrationDocument =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if doc.polarity != expect {
        bail!(
            "{}: calibration has {:?} polarity, expected {:?}",
            path.display(),
            doc.polarity,
            expect
        );
    }
    Ok(doc.threshold)
}

fn score_table(path: &Path) -> Result<ScoreTable> {
    let records = read_scores_file(path).with_context(|| format!("{}", path.display()))?;
    ScoreTable::from_records(&records).with_context(|| format!("{}", path.display()))
}

fn threshold(
    ctx: &mut Ctx<'_>,
    value: Option<f64>,
    calibration: &Option<PathBuf>,
    polarity: Polarity,
    flag: &str,
) -> Result<f64> {
    match (value, calibration) {
        (Some(t), _) => Ok(t),
        (None, Some(p)) => {
            let p = ctx.input(p);
            read_calibration(&p, polarity)
        }
        (None, None) => Err(usage(format!(
            "scored backend needs --{flag}-threshold or --{flag}-calibration"
        ))),
    }
}

fn track(ctx: &mut Ctx<'_>, a: &TrackArgs) -> Result<()> {
    let noise = NoiseConfig {
        p_occ_as_empty: a.noise.p_occ_as_empty,
        p_empty_as_occ: a.noise.p_empty_as_occ,
        far: a.noise.far,
        frr: a.noise.frr,
        seed: ctx.cli.seed,
    };
    noise.validate().map_err(|e| usage(e.to_string()))?;
    let missing = MissingIdentity::from(a.missing_car_id);

    let classifier: Box<dyn StatusClassifier> = match a.classifier {
        Backend::Oracle => Box::new(OracleClassifier),
        Backend::Noisy => Box::new(NoisyClassifier::new(noise)?),
        Backend::Scored => {
            let Some(path) = &a.occupancy_scores else {
                return Err(usage("--classifier scored needs --occupancy-scores"));
            };
            let t = threshold(
                ctx,
                a.occupancy_threshold,
                &a.occupancy_calibration,
                Polarity::Likelihood,
                "occupancy",
            )?;
            let path = ctx.input(path);
            Box::new(ScoredClassifier::new(score_table(&path)?, t, a.missing_score.into()))
        }
    };
    let comparator: Box<dyn CarComparator> = match a.comparator {
        Backend::Oracle => Box::new(OracleComparator::new(missing)),
        Backend::Noisy => Box::new(NoisyComparator::new(noise, missing)?),
        Backend::Scored => {
            let Some(path) = &a.pair_scores else {
                return Err(usage("--comparator scored needs --pair-scores"));
            };
            let t = threshold(ctx, a.pair_threshold, &a.pair_calibration, Polarity::Distance, "pair")?;
            let path = ctx.input(path);
            Box::new(ScoredComparator::new(score_table(&path)?, t))
        }
    };

    let report = ctx.ingest(&a.data)?;
    let opts = TrackOptions {
        parallelism: ctx.cli.parallelism as usize,
        fail_fast: !a.keep_going,
    };
    let episodes = track_dataset(&report.sequences, &classifier, &comparator, opts, None).map_err(|e| {
        let mut err = anyhow::Error::msg(e.to_string());
        if let parkdwell::engine::TrackError::Sequences(errs) = &e {
            for other in errs.iter().skip(1) {
                eprintln!("error: {other}");
            }
            let no_car = errs.iter().any(|x| matches!(x, parkdwell::engine::EngineError::Perception { source: PerceptionError::MissingCarId { .. }, .. }));
            if no_car && a.missing_car_id == MissingCarIdArg::Error {
                err = anyhow::anyhow!("{e}\nhint: a frame classified occupied has no annotated car; --missing-car-id vacant treats such frames as \"no car\"");
            }
        }
        err
    })?;

    let mut w = ctx.create("episodes.jsonl")?;
    for e in &episodes {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("{} episodes over {} sequences", episodes.len(), report.sequences.len());
    Ok(())
}

fn read_episodes(path: &Path) -> Result<Vec<PredictedEpisode>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: PredictedEpisode =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(e);
    }
    Ok(out)
}

fn evaluate_cmd(ctx: &mut Ctx<'_>, a: &EvaluateArgs) -> Result<()> {
    if a.bin_width <= 0 {
        return Err(usage(format!("--bin-width must be positive, got {}", a.bin_width)));
    }
    let report = ctx.ingest(&a.data)?;
    let stays = derive_all_ground_truth(&report.sequences);
    let path = ctx.input(&a.episodes);
    let episodes = read_episodes(&path)?;
    let opts = EvalOptions {
        bin_width: a.bin_width,
        hist_max: a.hist_max,
        exclude_spurious: a.exclude_spurious,
    };
    let result = evaluate(&stays, &episodes, opts)?;
    print!("{}", format_report(&result));
    ctx.write_json("report.json", &result)?;
    let mut w = ctx.create("histogram.csv")?;
    write_histogram_csv(&mut w, &result.histogram)?;
    w.flush()?;
    Ok(())
}

fn sim_config(lot: &LotArgs, seed: u64) -> SimConfig {
    let preset: parkdwell::simulator::Preset = lot.preset.into();
    let mut cfg = preset.sim_config();
    cfg.seed = seed;
    if let Some(v) = lot.n_spaces {
        cfg.n_spaces = v;
    }
    if let Some(v) = lot.k_seconds {
        cfg.k_seconds = v;
    }
    if let Some(v) = lot.horizon_frames {
        cfg.horizon_frames = v;
    }
    if let Some(v) = lot.arrival_prob {
        cfg.arrival_prob = v;
    }
    if let Some(v) = lot.dwell_frames_mean {
        cfg.dwell_frames_mean = v;
    }
    if let (Some(mu), Some(sigma)) = (lot.lognormal_mu, lot.lognormal_sigma) {
        cfg.dwell_distribution = DwellDistribution::LogNormal { mu, sigma };
    }
    if let Some(v) = lot.start_ts {
        cfg.start_ts = v;
    }
    cfg.allow_handover |= lot.allow_handover;
    cfg
}

fn simulate(ctx: &mut Ctx<'_>, a: &SimulateArgs) -> Result<()> {
    let axis: SweepAxis = a.axis.parse().map_err(|e| {
        usage(format!(
            "{e}; known axes: {}",
            SweepAxis::names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let base = sim_config(&a.lot, ctx.cli.seed);
    base.validate().map_err(|e| usage(e.to_string()))?;
    let preset: parkdwell::simulator::Preset = a.lot.preset.into();
    let mut noise = preset.noise();
    noise.p_occ_as_empty = a.noise.p_occ_as_empty.unwrap_or(noise.p_occ_as_empty);
    noise.p_empty_as_occ = a.noise.p_empty_as_occ.unwrap_or(noise.p_empty_as_occ);
    noise.far = a.noise.far.unwrap_or(noise.far);
    noise.frr = a.noise.frr.unwrap_or(noise.frr);
    noise.validate().map_err(|e| usage(e.to_string()))?;

    let seeds: Vec<u64> = match a.seeds.as_slice() {
        [n] if !a.explicit_seeds => (0..*n).map(|i| ctx.cli.seed.wrapping_add(i)).collect(),
        list => list.to_vec(),
    };
    if seeds.is_empty() {
        return Err(usage("--seeds must name at least one seed"));
    }
    if a.bin_width <= 0 {
        return Err(usage(format!("--bin-width must be positive, got {}", a.bin_width)));
    }
    let opts = SweepOptions {
        parallelism: ctx.cli.parallelism as usize,
        eval: EvalOptions {
            bin_width: a.bin_width,
            hist_max: None,
            exclude_spurious: a.exclude_spurious,
        },
    };
    let result = sweep(&base, &noise, axis, &a.values, &seeds, opts).map_err(|e| match e {
        parkdwell::simulator::SimError::Config(_) | parkdwell::simulator::SimError::NonIntegral { .. } => {
            usage(e.to_string())
        }
        other => other.into(),
    })?;

    let mut w = ctx.create("sweep.csv")?;
    write_sweep_csv(&mut w, &result)?;
    w.flush()?;
    ctx.write_json("sweep.json", &result)?;

    println!(
        "{:>12} {:>10} {:>10} {:>9} {:>9}",
        axis.name(),
        "MAE (s)",
        "RMSE (s)",
        "perfect",
        "sd(MAE)"
    );
    for p in &result.points {
        println!(
            "{:>12} {:>10.1} {:>10.1} {:>8.1}% {:>9.1}",
            p.value,
            p.mean_mae,
            p.mean_rmse,
            p.mean_perfect_fraction * 100.0,
            p.stdev_mae
        );
    }
    Ok(())
}

fn generate(ctx: &mut Ctx<'_>, a: &GenerateArgs) -> Result<()> {
    let cfg = sim_config(&a.lot, ctx.cli.seed);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let lot = generate_lot(&cfg)?;
    let mut w = ctx.create("annotations.jsonl")?;
    write_annotations(&mut w, &lot)?;
    w.flush()?;
    let stays = derive_all_ground_truth(&lot).len();
    println!(
        "{} spaces x {} frames, k = {} s, {} stays",
        cfg.n_spaces, cfg.horizon_frames, cfg.k_seconds, stays
    );
    Ok(())
}
