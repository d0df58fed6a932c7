//! Grid search over window length T and hidden units N, selecting the cell
//! with minimum validation loss. Every cell sees the same validation periods
//! (one shared split seed), so the argmin is a fair comparison. Finished
//! cells are cached on disk by content hash, making long grids resumable.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bars::LabelConfig;
use crate::dataset::{build_examples, make_split, DatasetError, FeatureTable, OffsetConfig, SplitConfig};
use crate::neural::{train, NeuralError, TrainConfig};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cell cache: {0}")]
    Cache(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Bar interval l in milliseconds (provenance for reports).
    pub interval_ms: i64,
    /// Forward-return horizon m in bars.
    pub horizon_m: u32,
    /// Label threshold.
    pub epsilon: f64,
    pub t_values: Vec<usize>,
    pub n_values: Vec<usize>,
    /// Validation period count and length; q must exceed every T so the
    /// periods are identical across cells.
    pub split_p: usize,
    pub split_q: usize,
    pub split_seed: u64,
    pub offset_fraction: f64,
    pub offset_seed: u64,
    /// Per-cell training settings; hidden_n is overridden by the cell's N.
    pub train: TrainConfig,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.t_values.is_empty() || self.n_values.is_empty() {
            return Err(SearchError::InvalidSpec("T and N lists must be non-empty".into()));
        }
        if let Some(&t) = self.t_values.iter().find(|&&t| self.split_q <= t) {
            return Err(SearchError::InvalidSpec(format!(
                "split_q {} must exceed every window length, found T={t}",
                self.split_q
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub window_t: usize,
    pub hidden_n: usize,
    /// None when the cell failed; see error.
    pub best_val_loss: Option<f64>,
    pub best_val_acc: Option<f64>,
    pub epochs_run: usize,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl CellResult {
    /// Everything that must reproduce across runs; wall time is excluded
    /// because it is measurement, not result.
    pub fn fingerprint(&self) -> (usize, usize, Option<u64>, Option<u64>, usize, Option<String>) {
        (
            self.window_t,
            self.hidden_n,
            self.best_val_loss.map(f64::to_bits),
            self.best_val_acc.map(f64::to_bits),
            self.epochs_run,
            self.error.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
    /// (T, N) of the winning cell, None when every cell failed.
    pub winner: Option<(usize, usize)>,
}

/// Argmin over successful cells by validation loss; ties break toward
/// smaller N, then smaller T. Pure function of the result table.
pub fn select_winner(cells: &[CellResult]) -> Option<(usize, usize)> {
    cells
        .iter()
        .filter_map(|c| c.best_val_loss.map(|l| (l, c.hidden_n, c.window_t)))
        .min_by(|a, b| a.partial_cmp(b).expect("cell losses are finite"))
        .map(|(_, n, t)| (t, n))
}

/// Stable fingerprint of the prepared feature table: shape plus every value
/// bit, so a cache can tell when the underlying data changed.
pub fn table_fingerprint(table: &FeatureTable) -> String {
    let mut hasher = Sha256::new();
    hasher.update(table.n_rows().to_le_bytes());
    hasher.update(table.interval_ms.to_le_bytes());
    for col in &table.features {
        for v in col {
            hasher.update(v.to_le_bytes());
        }
    }
    for (m, col) in &table.fwd {
        hasher.update(m.to_le_bytes());
        for v in col {
            hasher.update(v.to_le_bytes());
        }
    }
    for d in table.differenced {
        hasher.update([u8::from(d)]);
    }
    hex::encode(hasher.finalize())
}

/// Cache identity of one cell: the data, the shared settings, this cell's
/// coordinates, and the code version. Serialized field order is fixed.
#[derive(Serialize)]
struct CellKey<'a> {
    version: &'a str,
    data_hash: &'a str,
    horizon_m: u32,
    epsilon: f64,
    window_t: usize,
    hidden_n: usize,
    split_p: usize,
    split_q: usize,
    split_seed: u64,
    offset_fraction: f64,
    offset_seed: u64,
    train: &'a TrainConfig,
}

fn cell_cache_path(dir: &Path, key: &CellKey) -> Result<PathBuf, SearchError> {
    let digest = Sha256::digest(serde_json::to_vec(key)?);
    Ok(dir.join(format!("cell-{}.json", &hex::encode(digest)[..24])))
}

fn run_cell(
    table: &FeatureTable,
    spec: &GridSpec,
    window_t: usize,
    hidden_n: usize,
) -> CellResult {
    let started = Instant::now();
    let outcome = (|| -> Result<(f64, f64, usize), SearchError> {
        let split = SplitConfig {
            p: spec.split_p,
            q: spec.split_q,
            window_t,
            seed: spec.split_seed,
        };
        let periods = make_split(table.n_rows(), &split)?;
        let sets = build_examples(
            table,
            &periods,
            window_t,
            &LabelConfig { horizon_m: spec.horizon_m, epsilon: spec.epsilon },
            &OffsetConfig { fraction: spec.offset_fraction, seed: spec.offset_seed },
        )?;
        let cfg = TrainConfig { hidden_n, ..spec.train.clone() };
        let trained = train(&sets.training, &sets.validation, &cfg)?;
        let best_acc = trained.history[trained.best_epoch].val_acc;
        Ok((trained.best_val_loss, best_acc, trained.history.len()))
    })();
    let wall_time_s = started.elapsed().as_secs_f64();
    match outcome {
        Ok((loss, acc, epochs)) => CellResult {
            window_t,
            hidden_n,
            best_val_loss: Some(loss),
            best_val_acc: Some(acc),
            epochs_run: epochs,
            wall_time_s,
            error: None,
        },
        Err(err) => CellResult {
            window_t,
            hidden_n,
            best_val_loss: None,
            best_val_acc: None,
            epochs_run: 0,
            wall_time_s,
            error: Some(err.to_string()),
        },
    }
}

/// Trains one model per (T, N) cell in deterministic cell order. A failed
/// cell is recorded with its error, not fatal. With a cache directory,
/// finished cells are skipped on restart.
pub fn run_grid(
    table: &FeatureTable,
    spec: &GridSpec,
    cache_dir: Option<&Path>,
) -> Result<GridResult, SearchError> {
    spec.validate()?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let data_hash = table_fingerprint(table);

    let mut cells = Vec::with_capacity(spec.t_values.len() * spec.n_values.len());
    for &window_t in &spec.t_values {
        for &hidden_n in &spec.n_values {
            let key = CellKey {
                version: crate::VERSION,
                data_hash: &data_hash,
                horizon_m: spec.horizon_m,
                epsilon: spec.epsilon,
                window_t,
                hidden_n,
                split_p: spec.split_p,
                split_q: spec.split_q,
                split_seed: spec.split_seed,
                offset_fraction: spec.offset_fraction,
                offset_seed: spec.offset_seed,
                train: &spec.train,
            };
            let cache_path = match cache_dir {
                Some(dir) => Some(cell_cache_path(dir, &key)?),
                None => None,
            };
            if let Some(path) = &cache_path {
                if let Ok(bytes) = std::fs::read(path) {
                    if let Ok(cached) = serde_json::from_slice::<CellResult>(&bytes) {
                        cells.push(cached);
                        continue;
                    }
                }
            }
            let result = run_cell(table, spec, window_t, hidden_n);
            if let Some(path) = &cache_path {
                let tmp = path.with_extension("json.tmp");
                let mut file = std::fs::File::create(&tmp)?;
                file.write_all(&serde_json::to_vec_pretty(&result)?)?;
                file.sync_all()?;
                std::fs::rename(&tmp, path)?;
            }
            cells.push(result);
        }
    }

    let winner = select_winner(&cells);
    Ok(GridResult { cells, winner })
}

/// window_t, hidden_n, best_val_loss, best_val_acc, epochs_run, wall_time_s, error
pub fn write_grid_csv(path: &Path, result: &GridResult) -> Result<(), SearchError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "window_t,hidden_n,best_val_loss,best_val_acc,epochs_run,wall_time_s,error")?;
    for c in &result.cells {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.window_t,
            c.hidden_n,
            fmt(c.best_val_loss),
            fmt(c.best_val_acc),
            c.epochs_run,
            c.wall_time_s,
            c.error.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

pub fn write_grid_json(path: &Path, result: &GridResult) -> Result<(), SearchError> {
    std::fs::write(path, serde_json::to_vec_pretty(result)?)?;
    Ok(())
}

/// Cells ranked by validation loss (failures last), for terminal display.
pub fn ranked_rows(result: &GridResult) -> Vec<&CellResult> {
    let mut rows: Vec<&CellResult> = result.cells.iter().collect();
    rows.sort_by(|a, b| match (a.best_val_loss, b.best_val_loss) {
        (Some(x), Some(y)) => x
            .partial_cmp(&y)
            .unwrap()
            .then(a.hidden_n.cmp(&b.hidden_n))
            .then(a.window_t.cmp(&b.window_t)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bars::{resample_with_returns, BarConfig};
    use crate::trade::synth::{synth_trades, Regime, SynthConfig};

    fn small_table() -> FeatureTable {
        let synth = SynthConfig {
            seed: 17,
            intervals: 260,
            interval_ms: 1000,
            trades_per_interval: 6,
            regime: Regime::PlantedSignal { horizon: 2, strength: 0.01, taker_bias: 0.4 },
            ..SynthConfig::default()
        };
        let stream = synth_trades(&synth).unwrap();
        let bars = resample_with_returns(
            &stream.trades,
            &BarConfig { interval_ms: 1000, horizons: vec![2] },
        )
        .unwrap();
        FeatureTable::from_bars(&bars, 1000).unwrap()
    }

    fn small_spec() -> GridSpec {
        GridSpec {
            interval_ms: 1000,
            horizon_m: 2,
            epsilon: 0.0,
            t_values: vec![4, 6],
            n_values: vec![3, 4],
            split_p: 2,
            split_q: 30,
            split_seed: 8,
            offset_fraction: 0.34,
            offset_seed: 9,
            train: TrainConfig {
                max_epochs: 5,
                seed: 4,
                patience: 30,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn winner_tie_breaks_toward_smaller_n_then_t() {
        let cell = |t: usize, n: usize, loss: f64| CellResult {
            window_t: t,
            hidden_n: n,
            best_val_loss: Some(loss),
            best_val_acc: Some(0.5),
            epochs_run: 1,
            wall_time_s: 0.0,
            error: None,
        };
        assert_eq!(select_winner(&[cell(4, 8, 0.6), cell(6, 4, 0.5)]), Some((6, 4)));
        // exact tie on loss: smaller N wins
        assert_eq!(select_winner(&[cell(4, 8, 0.5), cell(6, 4, 0.5)]), Some((6, 4)));
        // tie on loss and N: smaller T wins
        assert_eq!(select_winner(&[cell(6, 4, 0.5), cell(4, 4, 0.5)]), Some((4, 4)));
        assert_eq!(select_winner(&[]), None);
        let failed = CellResult {
            window_t: 2,
            hidden_n: 2,
            best_val_loss: None,
            best_val_acc: None,
            epochs_run: 0,
            wall_time_s: 0.0,
            error: Some("boom".into()),
        };
        assert_eq!(select_winner(&[failed]), None);
    }

    #[test]
    fn grid_runs_all_cells_and_picks_argmin() {
        let table = small_table();
        let result = run_grid(&table, &small_spec(), None).unwrap();
        assert_eq!(result.cells.len(), 4);
        assert!(result.cells.iter().all(|c| c.error.is_none()));
        let best = result
            .cells
            .iter()
            .min_by(|a, b| a.best_val_loss.partial_cmp(&b.best_val_loss).unwrap())
            .unwrap();
        assert_eq!(result.winner, Some((best.window_t, best.hidden_n)));
    }

    #[test]
    fn cells_reproduce_across_runs() {
        let table = small_table();
        let spec = small_spec();
        let one = run_grid(&table, &spec, None).unwrap();
        let two = run_grid(&table, &spec, None).unwrap();
        let project = |r: &GridResult| -> Vec<_> { r.cells.iter().map(CellResult::fingerprint).collect() };
        assert_eq!(project(&one), project(&two));
        assert_eq!(one.winner, two.winner);
    }

    #[test]
    fn resume_after_partial_cache_yields_identical_results() {
        let table = small_table();
        let spec = small_spec();
        let dir = tempfile::tempdir().unwrap();
        let full = run_grid(&table, &spec, Some(dir.path())).unwrap();

        // simulate a kill after two cells: drop half the cache entries
        let mut entries: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        assert_eq!(entries.len(), 4);
        for path in entries.iter().take(2) {
            std::fs::remove_file(path).unwrap();
        }

        let resumed = run_grid(&table, &spec, Some(dir.path())).unwrap();
        let project = |r: &GridResult| -> Vec<_> { r.cells.iter().map(CellResult::fingerprint).collect() };
        assert_eq!(project(&resumed), project(&full));
        assert_eq!(resumed.winner, full.winner);
    }

    #[test]
    fn cache_hit_skips_retraining() {
        let table = small_table();
        let spec = GridSpec { t_values: vec![4], n_values: vec![3], ..small_spec() };
        let dir = tempfile::tempdir().unwrap();
        let first = run_grid(&table, &spec, Some(dir.path())).unwrap();
        let second = run_grid(&table, &spec, Some(dir.path())).unwrap();
        // loaded from cache: wall time is the original measurement, bit for bit
        assert_eq!(first, second);
    }

    #[test]
    fn changed_data_invalidates_cache_key() {
        let table = small_table();
        let a = table_fingerprint(&table);
        let mut other = table;
        other.features[0][0] += 1.0;
        assert_ne!(a, table_fingerprint(&other));
    }

    #[test]
    fn spec_validation_catches_small_q() {
        let spec = GridSpec { split_q: 6, ..small_spec() };
        assert!(matches!(spec.validate(), Err(SearchError::InvalidSpec(_))));
    }

    #[test]
    fn grid_outputs_render_to_csv_and_json() {
        let table = small_table();
        let spec = GridSpec { t_values: vec![4], n_values: vec![3], ..small_spec() };
        let result = run_grid(&table, &spec, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("grid.csv");
        let json_path = dir.path().join("grid.json");
        write_grid_csv(&csv_path, &result).unwrap();
        write_grid_json(&json_path, &result).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("window_t,hidden_n,best_val_loss"));
        assert_eq!(text.lines().count(), 2);
        let parsed: GridResult =
            serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();
        assert_eq!(parsed, result);
        assert_eq!(ranked_rows(&result).len(), 1);
    }
}
