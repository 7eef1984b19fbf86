//! Experiment configuration, on-disk datasets and the pipeline steps behind
//! each CLI command. Every step writes into its own `<out_dir>/<command>/`
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{
    make_chunks, read_feature_stream, read_json, write_feature_stream, write_json, AnnotationSet, FeatureStream,
    Modality, WindowDataset, CLASS_NAMES,
};
use crate::fusion::{Model, ModelSpec};
use crate::gradcheck_suite::run_suite;
use crate::metrics::{evaluate_classification, EpochRecord, EvalReport};
use crate::nn::{GradCheckReport, TrainConfig};
use crate::spotting::{
    average_map, extract_candidates, predict_series, read_candidates_csv, write_candidates_csv, write_curve_csv,
    PredictionSeries, SpotMethod, SpottingCandidate, ToleranceCurve, DEFAULT_DELTA_MAX, DEFAULT_DELTA_MIN,
    DEFAULT_THRESHOLD,
};
use crate::synth::{class_balance, generate_game, make_split, ClassBalance, Split, SynthConfig, SynthGame};
use crate::train::train;

/// Key of the timestamp line in every JSON report; it is the only
/// run-dependent content of any output file.
pub const TIMESTAMP_KEY: &str = "generated_at_unix";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory, written by `synth` and read by the other commands.
    pub dir: PathBuf,
    #[serde(default)]
    pub synth: SynthConfig,
    /// Game seeds per split; defaults to the contiguous desk split starting
    /// at the experiment seed.
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpottingConfig {
    pub method: SpotMethod,
    pub threshold: f64,
}

impl Default for SpottingConfig {
    fn default() -> Self {
        Self {
            method: SpotMethod::SegmentCenter,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaRange {
    pub min: u32,
    pub max: u32,
}

impl Default for DeltaRange {
    fn default() -> Self {
        Self {
            min: DEFAULT_DELTA_MIN,
            max: DEFAULT_DELTA_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed: game seeds, initialization, shuffling and dropout.
    pub seed: u64,
    pub data: DataConfig,
    /// The fused model; single-modality baselines reuse its pooling.
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub chunk_len_s: usize,
    #[serde(default)]
    pub spotting: SpottingConfig,
    #[serde(default)]
    pub delta: DeltaRange,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        self.data.synth.validate()?;
        self.split()?;
        if self.chunk_len_s == 0 {
            return Err(Error::Config("chunk_len_s must be positive".into()));
        }
        if !(self.spotting.threshold > 0.0 && self.spotting.threshold < 1.0) {
            return Err(Error::Config(format!(
                "spotting threshold must be in (0, 1), got {}",
                self.spotting.threshold
            )));
        }
        if self.delta.min == 0 || self.delta.min > self.delta.max {
            return Err(Error::Config(format!(
                "delta range {}..={} must be non-empty and positive",
                self.delta.min, self.delta.max
            )));
        }
        Ok(())
    }

    /// Training options with the experiment seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn split(&self) -> Result<Split> {
        match &self.data.split {
            Some(s) => {
                s.validate()?;
                Ok(s.clone())
            }
            None => make_split(&self.data.synth, self.seed),
        }
    }

    /// Spec of the single-modality baseline sharing the fused pooling.
    pub fn single_spec(&self, modality: Modality) -> ModelSpec {
        ModelSpec {
            dropout_keep: self.model.dropout_keep,
            ..ModelSpec::single(modality, self.model.pooling.clone())
        }
    }

    pub fn command_dir(&self, command: &str) -> PathBuf {
        self.out_dir.join(command)
    }
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`, in which
/// case its previous contents are removed.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::OutputNotEmpty(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    generated_at_unix: u64,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON whose second line holds the generation timestamp and nothing
/// else.
pub fn write_report_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let generated_at_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        path,
        &Stamped {
            generated_at_unix,
            body,
        },
    )
}

/// File contents with the timestamp line removed, for reproducibility checks.
pub fn strip_timestamp(text: &str) -> String {
    let key = format!("\"{TIMESTAMP_KEY}\"");
    text.lines()
        .filter(|l| !l.trim_start().starts_with(&key))
        .collect::<Vec<_>>()
        .join("\n")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "epoch", "lr", "train_loss", "train_map", "val_map"])?;
    for r in history {
        w.write_record([
            r.stage.clone(),
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            opt(r.train_map),
            opt(r.val_map),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_per_class_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "n_positives", "ap"])?;
    for c in &report.per_class_ap {
        w.write_record([c.class.clone(), c.n_positives.to_string(), opt(c.ap)])?;
    }
    w.write_record(["map_events".to_string(), String::new(), opt(report.map_events)])?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_confusion_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["truth".to_string()];
    header.extend(CLASS_NAMES.iter().map(|c| format!("pred_{c}")));
    w.write_record(&header)?;
    for (c, row) in report.confusion.iter().enumerate() {
        let mut rec = vec![CLASS_NAMES[c].to_string()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the JSON report and its two CSV tables into `dir`.
pub fn write_eval_outputs(dir: &Path, report: &EvalReport) -> Result<()> {
    write_report_json(&dir.join("report.json"), report)?;
    write_per_class_csv(&dir.join("per_class_ap.csv"), report)?;
    write_confusion_csv(&dir.join("confusion.csv"), report)
}

/// Streams and annotations of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    pub game_id: String,
    /// `(video, audio)` per half.
    pub halves: Vec<(FeatureStream, FeatureStream)>,
    pub annotations: AnnotationSet,
}

impl From<SynthGame> for Game {
    fn from(g: SynthGame) -> Self {
        Self {
            game_id: g.game_id,
            halves: g.halves.into_iter().map(|h| (h.video, h.audio)).collect(),
            annotations: g.annotations,
        }
    }
}

impl Game {
    pub fn chunks(&self, chunk_len_s: usize) -> Result<WindowDataset> {
        let mut data = WindowDataset::empty(chunk_len_s);
        for (v, a) in &self.halves {
            data.extend(make_chunks(v, a, &self.annotations, chunk_len_s)?)?;
        }
        Ok(data)
    }
}

/// Game ids of each split, stored as `split.json` in a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl DatasetIndex {
    pub fn games(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }
}

fn stream_path(dir: &Path, game: &str, half: u8, m: Modality) -> PathBuf {
    dir.join(game).join(format!("half{half}_{}.json", m.as_str()))
}

pub fn write_game(dir: &Path, game: &Game) -> Result<()> {
    let gdir = dir.join(&game.game_id);
    fs::create_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;
    for (v, a) in &game.halves {
        for s in [v, a] {
            let data_file = format!("half{}_{}.f32", s.half, s.modality.as_str());
            write_feature_stream(s, &stream_path(dir, &game.game_id, s.half, s.modality), &data_file)?;
        }
    }
    game.annotations.write(&gdir.join("annotations.json"))
}

pub fn read_game(dir: &Path, game_id: &str) -> Result<Game> {
    let mut halves = Vec::new();
    for half in 1..=2 {
        let v = read_feature_stream(&stream_path(dir, game_id, half, Modality::Video))?;
        let a = read_feature_stream(&stream_path(dir, game_id, half, Modality::Audio))?;
        halves.push((v, a));
    }
    let annotations = AnnotationSet::read(&dir.join(game_id).join("annotations.json"))?;
    Ok(Game {
        game_id: game_id.into(),
        halves,
        annotations,
    })
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    read_json(&dir.join("split.json"))
}

/// Chunks of every game of a subset, in index order.
pub fn load_chunks(dir: &Path, index: &DatasetIndex, subset: Subset, chunk_len_s: usize) -> Result<WindowDataset> {
    let parts: Vec<WindowDataset> = index
        .games(subset)
        .par_iter()
        .map(|id| read_game(dir, id)?.chunks(chunk_len_s))
        .collect::<Result<_>>()?;
    let mut data = WindowDataset::empty(chunk_len_s);
    for p in parts {
        data.extend(p)?;
    }
    Ok(data)
}

fn check_width(spec: &ModelSpec, data: &WindowDataset) -> Result<()> {
    if let Some(s) = data.samples.first() {
        let want = spec.pooling.input_dim;
        if s.video.ncols() != want || s.audio.ncols() != want {
            return Err(Error::Config(format!(
                "features are {}/{} wide, model expects {want}",
                s.video.ncols(),
                s.audio.ncols()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub synth: SynthConfig,
    pub split: Split,
    pub index: DatasetIndex,
    pub chunk_len_s: usize,
    pub train_balance: ClassBalance,
}

/// Generates the synthetic dataset into `cfg.data.dir`.
pub fn cmd_synth(cfg: &ExperimentConfig, force: bool) -> Result<DatasetSummary> {
    let dir = &cfg.data.dir;
    prepare_output_dir(dir, force)?;
    let split = cfg.split()?;
    let seeds: Vec<u64> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .copied()
        .collect();
    let mut train_chunks = WindowDataset::empty(cfg.chunk_len_s);
    let games: Vec<(u64, WindowDataset)> = seeds
        .par_iter()
        .map(|&seed| {
            let game: Game = generate_game(seed, &cfg.data.synth)?.into();
            write_game(dir, &game)?;
            Ok((seed, game.chunks(cfg.chunk_len_s)?))
        })
        .collect::<Result<_>>()?;
    for (seed, chunks) in games {
        if split.train.contains(&seed) {
            train_chunks.extend(chunks)?;
        }
    }
    let ids = |s: &[u64]| s.iter().map(|&x| crate::synth::game_id(x)).collect();
    let index = DatasetIndex {
        train: ids(&split.train),
        val: ids(&split.val),
        test: ids(&split.test),
    };
    write_json(&dir.join("split.json"), &index)?;
    let summary = DatasetSummary {
        synth: cfg.data.synth.clone(),
        split,
        index,
        chunk_len_s: cfg.chunk_len_s,
        train_balance: class_balance(&train_chunks),
    };
    write_json(&dir.join("dataset.json"), &summary)?;
    Ok(summary)
}

/// Trains `cfg.model` (or `spec` when given) on the dataset directory.
pub fn cmd_train(cfg: &ExperimentConfig, spec: Option<&ModelSpec>, force: bool) -> Result<Checkpoint> {
    let spec = spec.unwrap_or(&cfg.model);
    let out = cfg.command_dir("train");
    let index = read_index(&cfg.data.dir)?;
    let train_set = load_chunks(&cfg.data.dir, &index, Subset::Train, cfg.chunk_len_s)?;
    let val_set = load_chunks(&cfg.data.dir, &index, Subset::Val, cfg.chunk_len_s)?;
    check_width(spec, &train_set)?;
    prepare_output_dir(&out, force)?;
    let outcome = train(spec, &train_set, &val_set, &cfg.train_config())?;
    let ckpt = Checkpoint::new(outcome.model.clone(), cfg.chunk_len_s, cfg.seed)
        .with_epoch(outcome.best_epoch, outcome.best_val_map)
        .with_history(outcome.history.clone());
    ckpt.save(&out.join("model.ckpt"))?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    let mut val_report = evaluate_classification(&outcome.model, &val_set)?;
    val_report.history = outcome.history;
    write_report_json(&out.join("val_report.json"), &val_report)?;
    Ok(ckpt)
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.header.chunk_len_s != cfg.chunk_len_s {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint chunk length {} s, config {} s",
            ckpt.header.chunk_len_s, cfg.chunk_len_s
        )));
    }
    if ckpt.header.spec.pooling != cfg.model.pooling {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint pooling {:?} differs from config {:?}",
            ckpt.header.spec.pooling, cfg.model.pooling
        )));
    }
    Ok(ckpt)
}

/// Classification report of a checkpoint on the test split.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, force: bool) -> Result<EvalReport> {
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let index = read_index(&cfg.data.dir)?;
    let test = load_chunks(&cfg.data.dir, &index, Subset::Test, cfg.chunk_len_s)?;
    check_width(&ckpt.model.spec, &test)?;
    let out = cfg.command_dir("eval");
    prepare_output_dir(&out, force)?;
    let mut report = evaluate_classification(&ckpt.model, &test)?;
    report.history = ckpt.header.history.clone();
    write_eval_outputs(&out, &report)?;
    write_history_csv(&out.join("history.csv"), &report.history)?;
    Ok(report)
}

/// Prediction series of every half of the given games.
pub fn game_series(model: &Model<f32>, games: &[Game], chunk_len_s: usize) -> Result<Vec<PredictionSeries>> {
    games
        .iter()
        .flat_map(|g| g.halves.iter())
        .map(|(v, a)| predict_series(model, v, a, chunk_len_s))
        .collect()
}

pub fn candidates_from_series(
    series: &[PredictionSeries],
    method: SpotMethod,
    chunk_len_s: usize,
    threshold: f64,
) -> Result<Vec<SpottingCandidate>> {
    let mut out = Vec::new();
    for s in series {
        out.extend(extract_candidates(s, method, chunk_len_s, threshold)?);
    }
    Ok(out)
}

fn read_games(dir: &Path, ids: &[String]) -> Result<Vec<Game>> {
    ids.iter().map(|id| read_game(dir, id)).collect()
}

/// Spotting candidates of a checkpoint on the test split.
pub fn cmd_spot(cfg: &ExperimentConfig, checkpoint: &Path, force: bool) -> Result<Vec<SpottingCandidate>> {
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let index = read_index(&cfg.data.dir)?;
    let games = read_games(&cfg.data.dir, &index.test)?;
    let out = cfg.command_dir("spot");
    prepare_output_dir(&out, force)?;
    let series = game_series(&ckpt.model, &games, cfg.chunk_len_s)?;
    let candidates = candidates_from_series(&series, cfg.spotting.method, cfg.chunk_len_s, cfg.spotting.threshold)?;
    write_candidates_csv(&out.join("candidates.csv"), &candidates)?;
    Ok(candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpottingSummary {
    pub n_candidates: usize,
    pub delta_min: u32,
    pub delta_max: u32,
    pub average_map: Option<f64>,
    pub curve: ToleranceCurve,
}

fn test_annotations(cfg: &ExperimentConfig) -> Result<Vec<AnnotationSet>> {
    let index = read_index(&cfg.data.dir)?;
    index
        .test
        .iter()
        .map(|id| AnnotationSet::read(&cfg.data.dir.join(id).join("annotations.json")))
        .collect()
}

/// mAP(delta) curve and Average-mAP of a candidates file against the test
/// annotations.
pub fn cmd_eval_spot(cfg: &ExperimentConfig, candidates: &Path, force: bool) -> Result<SpottingSummary> {
    let cands = read_candidates_csv(candidates)?;
    let annotations = test_annotations(cfg)?;
    let out = cfg.command_dir("eval-spot");
    prepare_output_dir(&out, force)?;
    let curve = average_map(&cands, &annotations, cfg.delta.min, cfg.delta.max)?;
    write_curve_csv(&out.join("curve.csv"), &curve)?;
    let summary = SpottingSummary {
        n_candidates: cands.len(),
        delta_min: cfg.delta.min,
        delta_max: cfg.delta.max,
        average_map: curve.average_map,
        curve,
    };
    write_report_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One cell of the extraction-method by model table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub model: String,
    pub method: SpotMethod,
    pub average_map: Option<f64>,
}

/// Average-mAP of every model under each of the three extraction methods.
pub fn spot_grid(
    models: &[&Model<f32>],
    games: &[Game],
    annotations: &[AnnotationSet],
    cfg: &ExperimentConfig,
) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for model in models {
        let series = game_series(model, games, cfg.chunk_len_s)?;
        for method in SpotMethod::ALL {
            let cands = candidates_from_series(&series, method, cfg.chunk_len_s, cfg.spotting.threshold)?;
            let curve = average_map(&cands, annotations, cfg.delta.min, cfg.delta.max)?;
            cells.push(GridCell {
                model: model.spec.label(),
                method,
                average_map: curve.average_map,
            });
        }
    }
    Ok(cells)
}

pub fn write_grid_csv(path: &Path, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "method", "average_map"])?;
    for c in cells {
        w.write_record([c.model.clone(), c.method.as_str().to_string(), opt(c.average_map)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_spot_grid(cfg: &ExperimentConfig, checkpoints: &[PathBuf], force: bool) -> Result<Vec<GridCell>> {
    let ckpts = checkpoints
        .iter()
        .map(|p| load_checkpoint(cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let index = read_index(&cfg.data.dir)?;
    let games = read_games(&cfg.data.dir, &index.test)?;
    let annotations: Vec<AnnotationSet> = games.iter().map(|g| g.annotations.clone()).collect();
    let out = cfg.command_dir("spot-grid");
    prepare_output_dir(&out, force)?;
    let models: Vec<&Model<f32>> = ckpts.iter().map(|c| &c.model).collect();
    let cells = spot_grid(&models, &games, &annotations, cfg)?;
    write_grid_csv(&out.join("grid.csv"), &cells)?;
    write_report_json(&out.join("grid.json"), &serde_json::json!({ "cells": cells }))?;
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub passed: bool,
    pub cases: Vec<GradCheckReport>,
}

pub fn cmd_gradcheck(out_dir: &Path, force: bool) -> Result<GradCheckSummary> {
    let out = out_dir.join("gradcheck");
    prepare_output_dir(&out, force)?;
    let cases = run_suite();
    let summary = GradCheckSummary {
        passed: cases.iter().all(|c| c.passed),
        cases,
    };
    write_report_json(&out.join("report.json"), &summary)?;
    Ok(summary)
}

/// Everything the desk experiment measures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeskOutcome {
    pub train_balance: ClassBalance,
    pub video: EvalReport,
    pub audio: EvalReport,
    pub fused: EvalReport,
    pub spotting: SpottingSummary,
    pub grid: Vec<GridCell>,
}

/// Generates the synthetic split in memory, trains the video-only,
/// audio-only and fused models, evaluates them on the test games and spots
/// events with the fused model. Reports go to `<out_dir>/desk/`.
pub fn cmd_desk(cfg: &ExperimentConfig, force: bool) -> Result<DeskOutcome> {
    let out = cfg.command_dir("desk");
    prepare_output_dir(&out, force)?;
    let split = cfg.split()?;
    let generate = |seeds: &[u64]| -> Result<Vec<Game>> {
        seeds
            .par_iter()
            .map(|&s| Ok(generate_game(s, &cfg.data.synth)?.into()))
            .collect()
    };
    let chunks = |games: &[Game]| -> Result<WindowDataset> {
        let mut data = WindowDataset::empty(cfg.chunk_len_s);
        for g in games {
            data.extend(g.chunks(cfg.chunk_len_s)?)?;
        }
        Ok(data)
    };
    let train_set = chunks(&generate(&split.train)?)?;
    let val_set = chunks(&generate(&split.val)?)?;
    let test_games = generate(&split.test)?;
    let test_set = chunks(&test_games)?;
    let annotations: Vec<AnnotationSet> = test_games.iter().map(|g| g.annotations.clone()).collect();
    check_width(&cfg.model, &train_set)?;
    let train_balance = class_balance(&train_set);
    write_json(&out.join("class_balance.json"), &train_balance)?;

    let tc = cfg.train_config();
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for spec in [
        cfg.single_spec(Modality::Video),
        cfg.single_spec(Modality::Audio),
        cfg.model.clone(),
    ] {
        let outcome = train(&spec, &train_set, &val_set, &tc)?;
        let mut report = evaluate_classification(&outcome.model, &test_set)?;
        report.history = outcome.history;
        let dir = out.join(spec.label());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_eval_outputs(&dir, &report)?;
        write_history_csv(&dir.join("history.csv"), &report.history)?;
        Checkpoint::new(outcome.model.clone(), cfg.chunk_len_s, cfg.seed)
            .with_epoch(outcome.best_epoch, outcome.best_val_map)
            .save(&dir.join("model.ckpt"))?;
        reports.push(report);
        models.push(outcome.model);
    }

    let fused = &models[2];
    let series = game_series(fused, &test_games, cfg.chunk_len_s)?;
    let candidates = candidates_from_series(&series, cfg.spotting.method, cfg.chunk_len_s, cfg.spotting.threshold)?;
    write_candidates_csv(&out.join("candidates.csv"), &candidates)?;
    let curve = average_map(&candidates, &annotations, cfg.delta.min, cfg.delta.max)?;
    write_curve_csv(&out.join("curve.csv"), &curve)?;
    let spotting = SpottingSummary {
        n_candidates: candidates.len(),
        delta_min: cfg.delta.min,
        delta_max: cfg.delta.max,
        average_map: curve.average_map,
        curve,
    };
    write_report_json(&out.join("spotting.json"), &spotting)?;

    let model_refs: Vec<&Model<f32>> = models.iter().collect();
    let grid = spot_grid(&model_refs, &test_games, &annotations, cfg)?;
    write_grid_csv(&out.join("grid.csv"), &grid)?;

    let mut it = reports.into_iter();
    let outcome = DeskOutcome {
        train_balance,
        video: it.next().expect("three reports"),
        audio: it.next().expect("three reports"),
        fused: it.next().expect("three reports"),
        spotting,
        grid,
    };
    write_report_json(&out.join("summary.json"), &outcome)?;
    Ok(outcome)
}
