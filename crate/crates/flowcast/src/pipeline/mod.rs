//! Stage orchestration: each stage reads the previous stage's artifacts from
//! an output root, writes its own into `<out>/<stage>/`, and records a
//! manifest of content hashes so reruns are verifiable byte for byte.
//!
//! Stages and their artifacts:
//!
//! | stage    | writes                                        |
//! |----------|-----------------------------------------------|
//! | synth    | trades.csv                                    |
//! | fetch    | trades.csv (+ pages/ raw-response cache)      |
//! | resample | bars.csv, bars.fccf                           |
//! | adf      | report.json                                   |
//! | split    | periods.json, train.fccf, val.fccf, split.json|
//! | train    | model.bin, history.csv, train.json            |
//! | grid     | grid.csv, grid.json (+ cells/ cache)          |
//! | evaluate | predictions.csv, rolling.csv, eval.json       |
//! | backtest | ledger.csv, equity.csv, backtest.json         |
//! | report   | summary.json, equity.svg, rolling_accuracy.svg|
//!
//! Every stage also writes `manifest.json`. Manifests contain no timestamps
//! or absolute paths; identical inputs and config produce identical bytes.

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::ExperimentConfig;

use crate::backtest::{
    self, accuracy_histogram, bars_per_day, chronological_eval, compare_benchmark, correctness,
    rolling_accuracy, simulate, BacktestError, SimConfig,
};
use crate::bars::{
    bars_from_columns, bars_to_columns, resample_with_returns, write_bars_csv, BarConfig,
    BarsError, Label, LabelConfig,
};
use crate::columnar::{ColumnSet, ColumnarError};
use crate::dataset::{
    build_examples, examples_from_columns, examples_to_columns, make_split, DatasetError,
    FeatureTable, OffsetConfig, SplitConfig,
};
use crate::neural::persist::{load_model, save_model, ModelMeta, NORMALIZATION_VERSION};
use crate::neural::train::{train, write_history_csv, StopReason};
use crate::neural::{NeuralError, Prediction};
use crate::search::{run_grid, write_grid_csv, write_grid_json, GridSpec, SearchError};
use crate::stationarity::{StationarityError, StationarityReport};
use crate::trade::fetch::{fetch_trades, FetchConfig};
use crate::trade::synth::synth_trades;
use crate::trade::{read_trades, write_trades, CsvSchema, TradeIoError};

/// Overrides where fetch pages and grid cells are cached.
pub const CACHE_DIR_ENV: &str = "FLOWCAST_CACHE_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config:\n  {}", violations.join("\n  "))]
    ConfigInvalid { violations: Vec<String> },
    #[error("missing artifact: run the '{stage}' stage first")]
    MissingArtifact { stage: String },
    #[error("artifact parse: {0}")]
    Artifact(String),
    #[error(transparent)]
    Trades(#[from] TradeIoError),
    #[error(transparent)]
    Bars(#[from] BarsError),
    #[error(transparent)]
    Columnar(#[from] ColumnarError),
    #[error(transparent)]
    Stationarity(#[from] StationarityError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("artifact json: {0}")]
    Json(#[from] serde_json::Error),
}

fn stationarity_code(e: &StationarityError) -> i32 {
    match e {
        StationarityError::InvalidConfig(_) => 1,
        StationarityError::TooShort { .. }
        | StationarityError::SingularDesign
        | StationarityError::NonFinite => 3,
    }
}

fn dataset_code(e: &DatasetError) -> i32 {
    match e {
        DatasetError::InvalidFraction(_) | DatasetError::InvalidConfig(_) => 1,
        DatasetError::NonFinite => 3,
        DatasetError::Stationarity(se) => stationarity_code(se),
        DatasetError::Infeasible { .. }
        | DatasetError::EmptyInput
        | DatasetError::Malformed(_)
        | DatasetError::Columnar(_) => 2,
    }
}

fn neural_code(e: &NeuralError) -> i32 {
    match e {
        NeuralError::InvalidConfig(_) => 1,
        NeuralError::NonFinite(_) | NeuralError::Diverged { .. } | NeuralError::ShapeMismatch(_) => 3,
        _ => 2,
    }
}

fn search_code(e: &SearchError) -> i32 {
    match e {
        SearchError::InvalidSpec(_) => 1,
        SearchError::Dataset(d) => dataset_code(d),
        SearchError::Neural(n) => neural_code(n),
        SearchError::Io(_) | SearchError::Cache(_) => 2,
    }
}

fn backtest_code(e: &BacktestError) -> i32 {
    match e {
        BacktestError::InvalidConfig(_) => 1,
        BacktestError::Dataset(d) => dataset_code(d),
        BacktestError::Neural(n) => neural_code(n),
        _ => 2,
    }
}

/// Process exit code for an error: 1 for configuration problems, 2 for
/// missing or malformed data and artifacts, 3 for numeric failures.
pub fn exit_code(err: &PipelineError) -> i32 {
    match err {
        PipelineError::ConfigInvalid { .. } => 1,
        PipelineError::MissingArtifact { .. } | PipelineError::Artifact(_) => 2,
        PipelineError::Trades(e) => match e {
            TradeIoError::InvalidConfig(_) => 1,
            _ => 2,
        },
        PipelineError::Bars(e) => match e {
            BarsError::InvalidConfig(_) => 1,
            _ => 2,
        },
        PipelineError::Columnar(_) => 2,
        PipelineError::Stationarity(e) => stationarity_code(e),
        PipelineError::Dataset(e) => dataset_code(e),
        PipelineError::Neural(e) => neural_code(e),
        PipelineError::Search(e) => search_code(e),
        PipelineError::Backtest(e) => backtest_code(e),
        PipelineError::Io(_) | PipelineError::Json(_) => 2,
    }
}

/// What one stage run produced: content hashes of everything read and
/// written, plus the exact settings that applied. No timestamps, no absolute
/// paths; a rerun with the same inputs writes the same bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    /// Hash of the fully resolved experiment config.
    pub config_hash: String,
    /// Input name (relative to the output root) to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output name (relative to the stage directory) to sha256.
    pub outputs: BTreeMap<String, String>,
    pub settings: serde_json::Value,
}

impl Manifest {
    fn new(stage: &str, cfg: &ExperimentConfig, settings: serde_json::Value) -> Self {
        Self {
            stage: stage.to_string(),
            version: crate::VERSION.to_string(),
            config_hash: config_hash(cfg),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            settings,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(dir.join("manifest.json"), bytes)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(dir.join("manifest.json"))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// A completed stage: its manifest plus one-line progress notes for the
/// terminal.
#[derive(Debug, Clone)]
pub struct StageRun {
    pub manifest: Manifest,
    pub notes: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// Hash of the resolved config; every stage manifest carries it, so mixed
/// artifact directories are detectable.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

fn stage_dir(out_root: &Path, stage: &str) -> Result<PathBuf, PipelineError> {
    let dir = out_root.join(stage);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn record_output(m: &mut Manifest, dir: &Path, name: &str) -> Result<(), PipelineError> {
    m.outputs.insert(name.to_string(), sha256_file(&dir.join(name))?);
    Ok(())
}

fn record_input(m: &mut Manifest, key: &str, path: &Path) -> Result<(), PipelineError> {
    m.inputs.insert(key.to_string(), sha256_file(path)?);
    Ok(())
}

fn require(path: PathBuf, producer: &str) -> Result<PathBuf, PipelineError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact { stage: producer.to_string() })
    }
}

/// Where the raw trade file for this config lives, plus the manifest key and
/// (for generated sources) the stage that produces it.
fn trades_input(cfg: &ExperimentConfig, out_root: &Path) -> Result<(PathBuf, String), PipelineError> {
    match cfg.data.source.as_str() {
        "csv" => {
            let path = cfg.data.trades_csv.clone().ok_or_else(|| PipelineError::ConfigInvalid {
                violations: vec!["data.trades_csv required for csv source".into()],
            })?;
            Ok((PathBuf::from(path), "trades.csv".to_string()))
        }
        "fetch" => {
            let path = require(out_root.join("fetch").join("trades.csv"), "fetch")?;
            Ok((path, "fetch/trades.csv".to_string()))
        }
        _ => {
            let path = require(out_root.join("synth").join("trades.csv"), "synth")?;
            Ok((path, "synth/trades.csv".to_string()))
        }
    }
}

fn cache_root(out_root: &Path, stage: &str, leaf: &str) -> PathBuf {
    match std::env::var(CACHE_DIR_ENV) {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir).join(leaf),
        _ => out_root.join(stage).join(leaf),
    }
}

fn schema_for(cfg: &ExperimentConfig) -> CsvSchema {
    CsvSchema { instrument: cfg.experiment.instrument.clone(), ..CsvSchema::default() }
}

// ---------------------------------------------------------------- stages

pub fn run_synth(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "synth")?;
    let stream = synth_trades(&cfg.synth.to_synth_config())?;

    let file = std::fs::File::create(dir.join("trades.csv"))?;
    write_trades(std::io::BufWriter::new(file), &stream.trades, &schema_for(cfg))?;

    let mut manifest = Manifest::new("synth", cfg, serde_json::to_value(&cfg.synth)?);
    record_output(&mut manifest, &dir, "trades.csv")?;
    manifest.write(&dir)?;

    let notes = vec![format!(
        "synth: {} trades over [{}, {}] -> synth/trades.csv",
        stream.meta.count, stream.meta.first_timestamp, stream.meta.last_timestamp
    )];
    Ok(StageRun { manifest, notes })
}

pub fn run_fetch(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "fetch")?;
    let (start_ms, end_ms) = match (cfg.data.start_ms, cfg.data.end_ms) {
        (Some(s), Some(e)) => (s, e),
        _ => {
            return Err(PipelineError::ConfigInvalid {
                violations: vec!["data.start_ms and data.end_ms required for fetch".into()],
            })
        }
    };

    let fetch_cfg = FetchConfig {
        endpoint: cfg.fetch.endpoint.clone().unwrap_or_default(),
        instrument: cfg.experiment.instrument.clone(),
        start_ms,
        end_ms,
        page_limit: cfg.fetch.page_limit,
        min_delay_ms: cfg.fetch.min_delay_ms,
        max_retries: cfg.fetch.max_retries,
        backoff_ms: cfg.fetch.backoff_ms,
        cache_dir: Some(cache_root(out_root, "fetch", "pages")),
        ..FetchConfig::default()
    };
    let stream = fetch_trades(&fetch_cfg)?;

    let file = std::fs::File::create(dir.join("trades.csv"))?;
    write_trades(std::io::BufWriter::new(file), &stream.trades, &schema_for(cfg))?;

    let mut manifest = Manifest::new("fetch", cfg, serde_json::to_value(&cfg.fetch)?);
    record_output(&mut manifest, &dir, "trades.csv")?;
    manifest.write(&dir)?;

    let notes = vec![format!(
        "fetch: {} trades over [{start_ms}, {end_ms}) -> fetch/trades.csv",
        stream.meta.count
    )];
    Ok(StageRun { manifest, notes })
}

pub fn run_resample(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "resample")?;
    let (input_path, input_key) = trades_input(cfg, out_root)?;

    let file = std::fs::File::open(&input_path)?;
    let stream = read_trades(std::io::BufReader::new(file), &schema_for(cfg))?;

    let bar_cfg = BarConfig::new(cfg.bars.interval_ms, cfg.bars.horizons.clone())?;
    let bars = resample_with_returns(&stream.trades, &bar_cfg)?;

    let csv_file = std::fs::File::create(dir.join("bars.csv"))?;
    write_bars_csv(std::io::BufWriter::new(csv_file), &bars)?;
    bars_to_columns(&bars).write_path(&dir.join("bars.fccf"))?;

    let mut manifest = Manifest::new("resample", cfg, serde_json::to_value(&cfg.bars)?);
    record_input(&mut manifest, &input_key, &input_path)?;
    record_output(&mut manifest, &dir, "bars.csv")?;
    record_output(&mut manifest, &dir, "bars.fccf")?;
    manifest.write(&dir)?;

    let notes = vec![format!(
        "resample: {} trades -> {} bars at {} ms",
        stream.meta.count,
        bars.len(),
        cfg.bars.interval_ms
    )];
    Ok(StageRun { manifest, notes })
}

/// Reads the resampled bars back as a feature table, plus the hash of the
/// file they came from.
fn load_table(cfg: &ExperimentConfig, out_root: &Path) -> Result<(FeatureTable, PathBuf), PipelineError> {
    let path = require(out_root.join("resample").join("bars.fccf"), "resample")?;
    let set = ColumnSet::read_path(&path)?;
    let bars = bars_from_columns(&set)?;
    let table = FeatureTable::from_bars(&bars, cfg.bars.interval_ms)?;
    Ok((table, path))
}

pub fn run_adf(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "adf")?;
    let (mut table, bars_path) = load_table(cfg, out_root)?;
    let report = table.stationarize(&cfg.stationarity.to_adf_config())?;

    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("report.json"), bytes)?;

    let mut manifest = Manifest::new("adf", cfg, serde_json::to_value(&cfg.stationarity)?);
    record_input(&mut manifest, "resample/bars.fccf", &bars_path)?;
    record_output(&mut manifest, &dir, "report.json")?;
    manifest.write(&dir)?;

    let differenced: Vec<&str> = report
        .columns
        .iter()
        .filter(|c| c.decision == "difference")
        .map(|c| c.column.as_str())
        .collect();
    let notes = vec![format!(
        "adf: {} of {} columns differenced ({})",
        differenced.len(),
        report.columns.len(),
        if differenced.is_empty() { "none".to_string() } else { differenced.join(", ") }
    )];
    Ok(StageRun { manifest, notes })
}

/// Everything the train stage needs to know about how the dataset was made.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitInfo {
    pub n_bars: usize,
    pub window_t: usize,
    pub interval_ms: i64,
    /// Which feature columns were first-differenced before windowing.
    pub differenced: [bool; 7],
    pub training_examples: usize,
    pub validation_examples: usize,
    pub training_balance: Option<f64>,
    pub validation_balance: Option<f64>,
    pub stationarity: StationarityReport,
}

pub fn run_split(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "split")?;
    let (mut table, bars_path) = load_table(cfg, out_root)?;
    let report = table.stationarize(&cfg.stationarity.to_adf_config())?;

    let split_cfg = SplitConfig {
        p: cfg.split.p,
        q: cfg.split.q,
        window_t: cfg.train.window_t,
        seed: cfg.split.seed,
    };
    let periods = make_split(table.n_rows(), &split_cfg)?;

    let label_cfg = LabelConfig { horizon_m: cfg.label.horizon_m, epsilon: cfg.label.epsilon };
    let offsets = OffsetConfig { fraction: cfg.offsets.fraction, seed: cfg.offsets.seed };
    let sets = build_examples(&table, &periods, cfg.train.window_t, &label_cfg, &offsets)?;

    let mut bytes = serde_json::to_vec_pretty(&periods)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("periods.json"), bytes)?;
    examples_to_columns(&sets.training)?.write_path(&dir.join("train.fccf"))?;
    examples_to_columns(&sets.validation)?.write_path(&dir.join("val.fccf"))?;

    let info = SplitInfo {
        n_bars: table.n_rows(),
        window_t: cfg.train.window_t,
        interval_ms: cfg.bars.interval_ms,
        differenced: table.differenced,
        training_examples: sets.training.len(),
        validation_examples: sets.validation.len(),
        training_balance: sets.training_balance,
        validation_balance: sets.validation_balance,
        stationarity: report,
    };
    let mut bytes = serde_json::to_vec_pretty(&info)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("split.json"), bytes)?;

    let mut settings = serde_json::to_value(&cfg.split)?;
    settings["offsets"] = serde_json::to_value(&cfg.offsets)?;
    let mut manifest = Manifest::new("split", cfg, settings);
    record_input(&mut manifest, "resample/bars.fccf", &bars_path)?;
    for name in ["periods.json", "train.fccf", "val.fccf", "split.json"] {
        record_output(&mut manifest, &dir, name)?;
    }
    manifest.write(&dir)?;

    let notes = vec![format!(
        "split: {} training / {} validation examples from {} periods (balance {:.3} / {:.3})",
        info.training_examples,
        info.validation_examples,
        periods.len(),
        info.training_balance.unwrap_or(f64::NAN),
        info.validation_balance.unwrap_or(f64::NAN)
    )];
    Ok(StageRun { manifest, notes })
}

/// Training summary written next to the model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainInfo {
    pub window_t: usize,
    pub hidden_n: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stop: StopReason,
    pub training_examples: usize,
    pub validation_examples: usize,
}

pub fn run_train(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "train")?;
    let split_dir = out_root.join("split");
    let train_path = require(split_dir.join("train.fccf"), "split")?;
    let val_path = require(split_dir.join("val.fccf"), "split")?;
    let info_path = require(split_dir.join("split.json"), "split")?;

    let training = examples_from_columns(&ColumnSet::read_path(&train_path)?)?;
    let validation = examples_from_columns(&ColumnSet::read_path(&val_path)?)?;
    let split_info: SplitInfo = serde_json::from_slice(&std::fs::read(&info_path)?)?;

    let outcome = train(&training, &validation, &cfg.train.to_train_config())?;

    let meta = ModelMeta {
        window_t: split_info.window_t,
        interval_ms: split_info.interval_ms,
        horizon_m: cfg.label.horizon_m,
        epsilon: cfg.label.epsilon,
        differenced: split_info.differenced,
        normalization_version: NORMALIZATION_VERSION,
    };
    save_model(&dir.join("model.bin"), &outcome.params, &meta)?;
    write_history_csv(&dir.join("history.csv"), &outcome.history)?;

    let info = TrainInfo {
        window_t: split_info.window_t,
        hidden_n: cfg.train.hidden_n,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        epochs_run: outcome.history.len(),
        stop: outcome.stop,
        training_examples: training.len(),
        validation_examples: validation.len(),
    };
    let mut bytes = serde_json::to_vec_pretty(&info)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("train.json"), bytes)?;

    let mut manifest = Manifest::new("train", cfg, serde_json::to_value(&cfg.train)?);
    for (key, path) in [
        ("split/train.fccf", &train_path),
        ("split/val.fccf", &val_path),
        ("split/split.json", &info_path),
    ] {
        record_input(&mut manifest, key, path)?;
    }
    for name in ["model.bin", "history.csv", "train.json"] {
        record_output(&mut manifest, &dir, name)?;
    }
    manifest.write(&dir)?;

    let best = &outcome.history[outcome.best_epoch];
    let notes = vec![format!(
        "train: best epoch {} of {} (val loss {:.4}, val acc {:.3}, stop {:?})",
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val_loss,
        best.val_acc,
        outcome.stop
    )];
    Ok(StageRun { manifest, notes })
}

pub fn run_grid_search(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "grid")?;
    let (mut table, bars_path) = load_table(cfg, out_root)?;
    table.stationarize(&cfg.stationarity.to_adf_config())?;

    let spec = GridSpec {
        interval_ms: cfg.bars.interval_ms,
        horizon_m: cfg.label.horizon_m,
        epsilon: cfg.label.epsilon,
        t_values: cfg.grid.t_values.clone(),
        n_values: cfg.grid.n_values.clone(),
        split_p: cfg.split.p,
        split_q: cfg.grid.split_q.expect("resolved config"),
        split_seed: cfg.split.seed,
        offset_fraction: cfg.offsets.fraction,
        offset_seed: cfg.offsets.seed,
        train: cfg.train.to_train_config(),
    };
    let cells_dir = cache_root(out_root, "grid", "cells");
    let result = run_grid(&table, &spec, Some(&cells_dir))?;

    write_grid_csv(&dir.join("grid.csv"), &result)?;
    write_grid_json(&dir.join("grid.json"), &result)?;

    let mut manifest = Manifest::new("grid", cfg, serde_json::to_value(&cfg.grid)?);
    record_input(&mut manifest, "resample/bars.fccf", &bars_path)?;
    record_output(&mut manifest, &dir, "grid.csv")?;
    record_output(&mut manifest, &dir, "grid.json")?;
    manifest.write(&dir)?;

    let mut notes = Vec::new();
    match result.winner {
        Some((t, n)) => notes.push(format!("grid: winner T={t} N={n} of {} cells", result.cells.len())),
        None => notes.push(format!("grid: no successful cells of {}", result.cells.len())),
    }
    for cell in crate::search::ranked_rows(&result).into_iter().take(5) {
        notes.push(match cell.best_val_loss {
            Some(loss) => format!(
                "  T={} N={}: val loss {:.4} ({} epochs)",
                cell.window_t, cell.hidden_n, loss, cell.epochs_run
            ),
            None => format!(
                "  T={} N={}: failed ({})",
                cell.window_t,
                cell.hidden_n,
                cell.error.as_deref().unwrap_or("unknown")
            ),
        });
    }
    Ok(StageRun { manifest, notes })
}

/// Out-of-sample evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalInfo {
    pub prediction_count: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub truth_up_share: f64,
    pub first_edge: usize,
    pub last_edge: usize,
    /// Rolling window actually used; the requested day-length window is
    /// clamped to the prediction count on short runs.
    pub rolling_window_bars: usize,
    pub rolling_window_clamped: bool,
}

fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<(), PipelineError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "prediction_index,prob_up,prob_down,predicted,actual")?;
    for p in predictions {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.prediction_index,
            p.probs[0],
            p.probs[1],
            if p.predicted.is_up() { "up" } else { "down" },
            if p.actual.is_up() { "up" } else { "down" },
        )?;
    }
    out.flush()?;
    Ok(())
}

fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| PipelineError::Artifact("empty predictions file".into()))?;
    if header != "prediction_index,prob_up,prob_down,predicted,actual" {
        return Err(PipelineError::Artifact(format!("unexpected predictions header '{header}'")));
    }
    let label = |raw: &str| match raw {
        "up" => Ok(Label::Up),
        "down" => Ok(Label::Down),
        other => Err(PipelineError::Artifact(format!("unknown label '{other}'"))),
    };
    let mut predictions = Vec::new();
    for (no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(PipelineError::Artifact(format!(
                "predictions row {} has {} fields",
                no + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| PipelineError::Artifact(format!("predictions row {}: bad {what}", no + 2));
        predictions.push(Prediction {
            prediction_index: fields[0].parse().map_err(|_| bad("index"))?,
            probs: [
                fields[1].parse().map_err(|_| bad("prob_up"))?,
                fields[2].parse().map_err(|_| bad("prob_down"))?,
            ],
            predicted: label(fields[3])?,
            actual: label(fields[4])?,
        });
    }
    Ok(predictions)
}

fn write_rolling_csv(path: &Path, series: &[Option<f64>]) -> Result<(), PipelineError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "ordinal,rolling_accuracy")?;
    for (i, value) in series.iter().enumerate() {
        match value {
            Some(v) => writeln!(out, "{i},{v}")?,
            None => writeln!(out, "{i},")?,
        }
    }
    out.flush()?;
    Ok(())
}

fn read_rolling_csv(path: &Path) -> Result<Vec<Option<f64>>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut series = Vec::new();
    for (no, line) in text.lines().skip(1).enumerate() {
        let (_, raw) = line
            .split_once(',')
            .ok_or_else(|| PipelineError::Artifact(format!("rolling row {}: no separator", no + 2)))?;
        if raw.is_empty() {
            series.push(None);
        } else {
            let v = raw
                .parse()
                .map_err(|_| PipelineError::Artifact(format!("rolling row {}: bad value", no + 2)))?;
            series.push(Some(v));
        }
    }
    Ok(series)
}

/// Loads the trained model plus the prepared table it applies to, replaying
/// the recorded differencing so row indices line up with training.
fn load_model_and_table(
    cfg: &ExperimentConfig,
    out_root: &Path,
) -> Result<(crate::neural::LstmParams, ModelMeta, FeatureTable, PathBuf, PathBuf), PipelineError> {
    let model_path = require(out_root.join("train").join("model.bin"), "train")?;
    let (params, meta) = load_model(&model_path)?;
    if meta.interval_ms != cfg.bars.interval_ms {
        return Err(PipelineError::Backtest(BacktestError::ModelShapeMismatch(format!(
            "model was trained on {} ms bars, config asks for {} ms",
            meta.interval_ms, cfg.bars.interval_ms
        ))));
    }
    let (mut table, bars_path) = load_table(cfg, out_root)?;
    table.apply_differencing(meta.differenced)?;
    Ok((params, meta, table, model_path, bars_path))
}

pub fn run_evaluate(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "evaluate")?;
    let (params, meta, table, model_path, bars_path) = load_model_and_table(cfg, out_root)?;

    // Out-of-sample truth is the sign of the forward return: threshold zero,
    // whatever epsilon shaped the training labels.
    let label_cfg = LabelConfig { horizon_m: meta.horizon_m, epsilon: 0.0 };
    let eval = chronological_eval(&params, meta.window_t, &table, &label_cfg)?;

    let requested = cfg
        .backtest
        .rolling_window_bars
        .unwrap_or_else(|| bars_per_day(meta.interval_ms))
        .max(1);
    let window = requested.min(eval.predictions.len());
    let rolling = rolling_accuracy(&correctness(&eval.predictions), window)?;

    write_predictions_csv(&dir.join("predictions.csv"), &eval.predictions)?;
    write_rolling_csv(&dir.join("rolling.csv"), &rolling.series)?;

    let info = EvalInfo {
        prediction_count: eval.predictions.len(),
        loss: eval.loss,
        accuracy: eval.accuracy,
        truth_up_share: eval.truth_up_share,
        first_edge: eval.predictions.first().map_or(0, |p| p.prediction_index),
        last_edge: eval.predictions.last().map_or(0, |p| p.prediction_index),
        rolling_window_bars: window,
        rolling_window_clamped: window != requested,
    };
    let mut bytes = serde_json::to_vec_pretty(&info)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("eval.json"), bytes)?;

    let mut manifest = Manifest::new("evaluate", cfg, serde_json::to_value(&cfg.label)?);
    record_input(&mut manifest, "train/model.bin", &model_path)?;
    record_input(&mut manifest, "resample/bars.fccf", &bars_path)?;
    for name in ["predictions.csv", "rolling.csv", "eval.json"] {
        record_output(&mut manifest, &dir, name)?;
    }
    manifest.write(&dir)?;

    let notes = vec![format!(
        "evaluate: {} predictions, accuracy {:.4}, loss {:.4} (up share {:.3})",
        info.prediction_count, info.accuracy, info.loss, info.truth_up_share
    )];
    Ok(StageRun { manifest, notes })
}

/// Costed simulation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestInfo {
    pub trade_count: usize,
    pub gross_return: f64,
    pub total_cost: f64,
    pub net_return: f64,
    pub hit_rate: f64,
    pub benchmark_return: f64,
    pub strategy_max_drawdown: f64,
    pub benchmark_max_drawdown: f64,
}

pub fn run_backtest(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "backtest")?;
    let predictions_path = require(out_root.join("evaluate").join("predictions.csv"), "evaluate")?;
    let predictions = read_predictions_csv(&predictions_path)?;
    let (_, meta, table, model_path, bars_path) = load_model_and_table(cfg, out_root)?;

    let sim = SimConfig {
        horizon_m: meta.horizon_m,
        cost_rate: cfg.backtest.cost_rate,
        size: cfg.backtest.size,
        fill: cfg.backtest.fill_policy(),
        short_mode: cfg.backtest.short_mode(),
    };
    let ledger = simulate(&predictions, &table, &sim)?;
    let benchmark = compare_benchmark(&ledger, &table, sim.fill);

    backtest::write_ledger_csv(&dir.join("ledger.csv"), &ledger)?;
    backtest::write_equity_csv(&dir.join("equity.csv"), &ledger, &benchmark)?;

    let info = BacktestInfo {
        trade_count: ledger.trade_count,
        gross_return: ledger.gross_return,
        total_cost: ledger.total_cost,
        net_return: ledger.net_return,
        hit_rate: ledger.hit_rate,
        benchmark_return: benchmark.benchmark_return,
        strategy_max_drawdown: benchmark.strategy_max_drawdown,
        benchmark_max_drawdown: benchmark.benchmark_max_drawdown,
    };
    let mut bytes = serde_json::to_vec_pretty(&info)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("backtest.json"), bytes)?;

    let mut manifest = Manifest::new("backtest", cfg, serde_json::to_value(&cfg.backtest)?);
    record_input(&mut manifest, "evaluate/predictions.csv", &predictions_path)?;
    record_input(&mut manifest, "train/model.bin", &model_path)?;
    record_input(&mut manifest, "resample/bars.fccf", &bars_path)?;
    for name in ["ledger.csv", "equity.csv", "backtest.json"] {
        record_output(&mut manifest, &dir, name)?;
    }
    manifest.write(&dir)?;

    let notes = vec![format!(
        "backtest: {} trades, net {:.4} (gross {:.4}, cost {:.4}), hit rate {:.4}, benchmark {:.4}",
        info.trade_count, info.net_return, info.gross_return, info.total_cost, info.hit_rate,
        info.benchmark_return
    )];
    Ok(StageRun { manifest, notes })
}

fn read_equity_csv(path: &Path) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>), PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut bars = Vec::new();
    let mut strategy = Vec::new();
    let mut benchmark = Vec::new();
    for (no, line) in text.lines().skip(1).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(PipelineError::Artifact(format!("equity row {}: bad shape", no + 2)));
        }
        let bad = |what: &str| PipelineError::Artifact(format!("equity row {}: bad {what}", no + 2));
        bars.push(fields[0].parse().map_err(|_| bad("bar index"))?);
        strategy.push(fields[1].parse().map_err(|_| bad("strategy equity"))?);
        benchmark.push(fields[2].parse().map_err(|_| bad("benchmark equity"))?);
    }
    Ok((bars, strategy, benchmark))
}

pub fn run_report(cfg: &ExperimentConfig, out_root: &Path) -> Result<StageRun, PipelineError> {
    let dir = stage_dir(out_root, "report")?;
    let eval_path = require(out_root.join("evaluate").join("eval.json"), "evaluate")?;
    let rolling_path = require(out_root.join("evaluate").join("rolling.csv"), "evaluate")?;
    let backtest_path = require(out_root.join("backtest").join("backtest.json"), "backtest")?;
    let equity_path = require(out_root.join("backtest").join("equity.csv"), "backtest")?;

    let eval_info: EvalInfo = serde_json::from_slice(&std::fs::read(&eval_path)?)?;
    let backtest_info: BacktestInfo = serde_json::from_slice(&std::fs::read(&backtest_path)?)?;
    let rolling = read_rolling_csv(&rolling_path)?;
    let (bars, strategy, benchmark) = read_equity_csv(&equity_path)?;

    // The grid is optional context: include its winner when present.
    let grid_path = out_root.join("grid").join("grid.json");
    let grid_winner: Option<(usize, usize)> = if grid_path.is_file() {
        let result: crate::search::GridResult = serde_json::from_slice(&std::fs::read(&grid_path)?)?;
        result.winner
    } else {
        None
    };

    let summary = serde_json::json!({
        "instrument": cfg.experiment.instrument,
        "evaluation": eval_info,
        "backtest": backtest_info,
        "grid_winner": grid_winner.map(|(t, n)| serde_json::json!({"window_t": t, "hidden_n": n})),
    });
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("summary.json"), bytes)?;

    let mut written = vec!["summary.json"];
    let series: Vec<(&str, &[f64])> = vec![("strategy", &strategy), ("benchmark", &benchmark)];
    if let Some(svg) = crate::plot::render_equity_chart("Net equity by bar", &bars, &series) {
        std::fs::write(dir.join("equity.svg"), svg)?;
        written.push("equity.svg");
    }
    let histogram = accuracy_histogram(&rolling, 20);
    if let Some(svg) =
        crate::plot::render_histogram("Rolling accuracy distribution", &histogram, "accuracy")
    {
        std::fs::write(dir.join("rolling_accuracy.svg"), svg)?;
        written.push("rolling_accuracy.svg");
    }

    let mut manifest = Manifest::new("report", cfg, serde_json::Value::Null);
    for (key, path) in [
        ("evaluate/eval.json", &eval_path),
        ("evaluate/rolling.csv", &rolling_path),
        ("backtest/backtest.json", &backtest_path),
        ("backtest/equity.csv", &equity_path),
    ] {
        record_input(&mut manifest, key, path)?;
    }
    if grid_path.is_file() {
        record_input(&mut manifest, "grid/grid.json", &grid_path)?;
    }
    for name in &written {
        record_output(&mut manifest, &dir, name)?;
    }
    manifest.write(&dir)?;

    let notes = vec![format!(
        "report: accuracy {:.4}, net return {:.4} vs benchmark {:.4} -> report/summary.json",
        eval_info.accuracy, backtest_info.net_return, backtest_info.benchmark_return
    )];
    Ok(StageRun { manifest, notes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted_config(dir_seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.synth.seed = dir_seed;
        cfg.synth.intervals = 320;
        cfg.synth.trades_per_interval = 6;
        cfg.synth.strength = 0.01;
        cfg.synth.taker_bias = 0.4;
        cfg.label.horizon_m = 2;
        cfg.train.window_t = 4;
        cfg.train.hidden_n = 3;
        cfg.train.max_epochs = 2;
        cfg.train.batch_schedule = vec![32];
        cfg.split.p = 3;
        cfg.split.q = 24;
        cfg.grid.t_values = vec![4];
        cfg.grid.n_values = vec![3];
        cfg.resolve();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        let config_err = PipelineError::ConfigInvalid { violations: vec!["x".into()] };
        assert_eq!(exit_code(&config_err), 1);
        assert_eq!(
            exit_code(&PipelineError::Neural(NeuralError::InvalidConfig("x".into()))),
            1
        );
        assert_eq!(
            exit_code(&PipelineError::MissingArtifact { stage: "train".into() }),
            2
        );
        assert_eq!(exit_code(&PipelineError::Artifact("bad row".into())), 2);
        assert_eq!(
            exit_code(&PipelineError::Neural(NeuralError::CorruptFile("short".into()))),
            2
        );
        assert_eq!(
            exit_code(&PipelineError::Neural(NeuralError::Diverged { epoch: 3 })),
            3
        );
        assert_eq!(
            exit_code(&PipelineError::Stationarity(StationarityError::SingularDesign)),
            3
        );
        assert_eq!(
            exit_code(&PipelineError::Dataset(DatasetError::Infeasible { p: 9, q: 9, n_bars: 10 })),
            2
        );
        assert_eq!(exit_code(&PipelineError::Dataset(DatasetError::InvalidFraction(0.7))), 1);
    }

    #[test]
    fn manifest_round_trips_and_orders_keys() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        let mut manifest = Manifest::new("synth", &cfg, serde_json::json!({"a": 1}));
        manifest.outputs.insert("z.csv".into(), "00".into());
        manifest.outputs.insert("a.csv".into(), "11".into());

        let dir = tempfile::tempdir().unwrap();
        manifest.write(dir.path()).unwrap();
        let back = Manifest::read(dir.path()).unwrap();
        assert_eq!(back, manifest);

        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let a = text.find("a.csv").unwrap();
        let z = text.find("z.csv").unwrap();
        assert!(a < z);
        assert!(!text.contains("time"));
    }

    #[test]
    fn config_hash_tracks_content_not_identity() {
        let a = ExperimentConfig::from_toml("").unwrap();
        let b = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = ExperimentConfig::from_toml("[label]\nhorizon_m = 7\n").unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn missing_upstream_artifact_names_its_stage() {
        let cfg = planted_config(1);
        let dir = tempfile::tempdir().unwrap();
        let err = run_resample(&cfg, dir.path()).unwrap_err();
        match err {
            PipelineError::MissingArtifact { stage } => assert_eq!(stage, "synth"),
            other => panic!("unexpected {other:?}"),
        }
        let err = run_train(&cfg, dir.path()).unwrap_err();
        match err {
            PipelineError::MissingArtifact { stage } => assert_eq!(stage, "split"),
            other => panic!("unexpected {other:?}"),
        }
        let err = run_report(&cfg, dir.path()).unwrap_err();
        match err {
            PipelineError::MissingArtifact { stage } => assert_eq!(stage, "evaluate"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stages_chain_end_to_end() {
        let cfg = planted_config(5);
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();

        run_synth(&cfg, root).unwrap();
        run_resample(&cfg, root).unwrap();
        run_adf(&cfg, root).unwrap();
        run_split(&cfg, root).unwrap();
        run_train(&cfg, root).unwrap();
        run_grid_search(&cfg, root).unwrap();
        let eval_run = run_evaluate(&cfg, root).unwrap();
        run_backtest(&cfg, root).unwrap();
        let report_run = run_report(&cfg, root).unwrap();

        assert!(eval_run.manifest.outputs.contains_key("predictions.csv"));
        assert!(report_run.manifest.outputs.contains_key("summary.json"));
        assert!(root.join("report").join("equity.svg").is_file());
        assert!(root.join("report").join("rolling_accuracy.svg").is_file());

        let info: EvalInfo =
            serde_json::from_slice(&std::fs::read(root.join("evaluate").join("eval.json")).unwrap())
                .unwrap();
        assert!(info.prediction_count > 0);
        assert!(info.rolling_window_clamped, "320 bars is far less than one day");

        // Prediction files survive the round trip exactly.
        let predictions = read_predictions_csv(&root.join("evaluate").join("predictions.csv")).unwrap();
        assert_eq!(predictions.len(), info.prediction_count);

        // Every manifest carries the same config hash.
        let expected = config_hash(&cfg);
        for stage in ["synth", "resample", "adf", "split", "train", "grid", "evaluate", "backtest", "report"] {
            let manifest = Manifest::read(&root.join(stage)).unwrap();
            assert_eq!(manifest.config_hash, expected, "{stage}");
            assert_eq!(manifest.stage, stage);
        }
    }

    #[test]
    fn rolling_csv_round_trips_missing_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rolling.csv");
        let series = vec![None, None, Some(0.5), Some(1.0)];
        write_rolling_csv(&path, &series).unwrap();
        assert_eq!(read_rolling_csv(&path).unwrap(), series);
    }
}
