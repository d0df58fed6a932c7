//! Out-of-sample evaluation in strict chronological order, rolling accuracy,
//! and a long/short simulation with per-order transaction costs.
//!
//! A prediction at window edge t is made after observing bars [t-T, t); the
//! position opens at bar t-1 (the last observed bar) and closes at bar
//! t-1+m, so every position is held for exactly m bars. Long and short
//! positions coexist independently; there is no netting.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bars::{Label, LabelConfig};
use crate::dataset::{normalize_window, DatasetError, FeatureTable};
use crate::neural::{forward, loss, LstmParams, NeuralError, Prediction};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("model shape mismatch: {0}")]
    ModelShapeMismatch(String),
    #[error("rolling window of {window} bars exceeds the {len} available predictions")]
    WindowTooLarge { window: usize, len: usize },
    #[error("position references bar {index} beyond the table")]
    MissingBar { index: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stride-1 evaluation result over every valid window edge.
#[derive(Debug, Clone)]
pub struct ChronoEval {
    /// One prediction per edge t in [T, n-m], ascending.
    pub predictions: Vec<Prediction>,
    pub loss: f64,
    pub accuracy: f64,
    /// Fraction of truth labels that are up.
    pub truth_up_share: f64,
}

/// Inference at every valid window edge t in [T, n-m], stride 1, no offset
/// subsampling. The truth labels use the caller's threshold (zero for
/// out-of-sample tests).
pub fn chronological_eval(
    params: &LstmParams,
    window_t: usize,
    table: &FeatureTable,
    label_cfg: &LabelConfig,
) -> Result<ChronoEval, BacktestError> {
    if params.f != table.features.len() {
        return Err(BacktestError::ModelShapeMismatch(format!(
            "model expects {} features, table has {}",
            params.f,
            table.features.len()
        )));
    }
    if window_t == 0 {
        return Err(BacktestError::ModelShapeMismatch("window length 0".into()));
    }
    let max_edge = table.max_edge(label_cfg.horizon_m);
    if max_edge < window_t {
        return Err(BacktestError::EmptyInput);
    }

    let mut predictions = Vec::with_capacity(max_edge - window_t + 1);
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut ups = 0usize;
    for t in window_t..=max_edge {
        let truth = table
            .label_at(t - 1, label_cfg)
            .ok_or(BacktestError::MissingBar { index: t - 1 })?;
        let window = normalize_window(&table.window_matrix(t, window_t))?;
        let cache = forward(&window, params, None)?;
        let predicted = if cache.probs[0] >= cache.probs[1] { Label::Up } else { Label::Down };
        total_loss += loss(&cache.probs, &truth.targets());
        if predicted == truth {
            correct += 1;
        }
        if truth.is_up() {
            ups += 1;
        }
        predictions.push(Prediction {
            probs: cache.probs,
            predicted,
            actual: truth,
            prediction_index: t,
        });
    }
    let count = predictions.len() as f64;
    Ok(ChronoEval {
        predictions,
        loss: total_loss / count,
        accuracy: correct as f64 / count,
        truth_up_share: ups as f64 / count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingAccuracy {
    pub window_bars: usize,
    /// One entry per prediction; None until the first full window.
    pub series: Vec<Option<f64>>,
}

/// Bars in one day at the given interval.
pub fn bars_per_day(interval_ms: i64) -> usize {
    (86_400_000 / interval_ms) as usize
}

/// Trailing-window mean of the correctness indicator.
pub fn rolling_accuracy(
    correct: &[bool],
    window_bars: usize,
) -> Result<RollingAccuracy, BacktestError> {
    if window_bars == 0 || window_bars > correct.len() {
        return Err(BacktestError::WindowTooLarge { window: window_bars, len: correct.len() });
    }
    let mut series = Vec::with_capacity(correct.len());
    let mut sum = 0usize;
    for (i, &c) in correct.iter().enumerate() {
        sum += usize::from(c);
        if i >= window_bars {
            sum -= usize::from(correct[i - window_bars]);
        }
        series.push((i + 1 >= window_bars).then(|| sum as f64 / window_bars as f64));
    }
    Ok(RollingAccuracy { window_bars, series })
}

pub fn correctness(predictions: &[Prediction]) -> Vec<bool> {
    predictions.iter().map(|p| p.predicted == p.actual).collect()
}

/// Counts per accuracy bin [i/bins, (i+1)/bins); 1.0 lands in the last bin.
/// Entries without a full window (None) are excluded.
pub fn accuracy_histogram(series: &[Option<f64>], bins: usize) -> Vec<(f64, usize)> {
    let mut counts = vec![0usize; bins];
    for value in series.iter().flatten() {
        let bin = ((value * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (i as f64 / bins as f64, c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Long,
    Short,
}

/// Which bar price fills orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FillPolicy {
    /// The interval's amount-weighted price.
    Vwap,
    /// The last trade price of the interval (default: a prediction executes
    /// at the most recent traded price).
    LastTrade,
}

/// Short-position return convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShortMode {
    /// open/close - 1: the cash profit of selling at open and buying back
    /// at close (default).
    OpenOverClose,
    /// -(close/open - 1): exact mirror of the long return, used by the
    /// anti-symmetry property.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Holding period in bars.
    pub horizon_m: u32,
    /// Per-order cost as a fraction of notional; a round trip pays twice.
    pub cost_rate: f64,
    /// Constant notional per trade, no compounding.
    pub size: f64,
    pub fill: FillPolicy,
    pub short_mode: ShortMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon_m: 1,
            cost_rate: 0.0003,
            size: 1.0,
            fill: FillPolicy::LastTrade,
            short_mode: ShortMode::OpenOverClose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub side: Side,
    pub open_index: usize,
    pub close_index: usize,
    pub open_price: f64,
    pub close_price: f64,
    pub size: f64,
    pub cost_rate: f64,
    /// Price return of the position before costs.
    pub gross_return: f64,
    /// gross_return - 2 * cost_rate.
    pub net_return: f64,
    /// Prediction agreed with the realized label.
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub positions: Vec<Position>,
    /// Bar index of each equity point: the open bar of each prediction.
    pub equity_bars: Vec<usize>,
    /// Cumulative net return, positions booked at their close bar.
    pub equity_curve: Vec<f64>,
    pub gross_return: f64,
    pub total_cost: f64,
    pub net_return: f64,
    pub trade_count: usize,
    /// Fraction of positions whose prediction matched the realized label;
    /// equals evaluation accuracy over the simulated range by construction.
    pub hit_rate: f64,
}

fn fill_price(table: &FeatureTable, index: usize, policy: FillPolicy) -> f64 {
    match policy {
        FillPolicy::Vwap => table.vwap[index],
        FillPolicy::LastTrade => table.last_price[index],
    }
}

/// Opens one position per prediction (long on up, short on down) at the
/// prediction's open bar, closes it m bars later, and books realized net
/// returns into the equity curve at close time.
pub fn simulate(
    predictions: &[Prediction],
    table: &FeatureTable,
    cfg: &SimConfig,
) -> Result<BacktestLedger, BacktestError> {
    if cfg.cost_rate < 0.0 || cfg.size <= 0.0 || cfg.horizon_m == 0 {
        return Err(BacktestError::InvalidConfig(format!(
            "cost_rate {} size {} horizon {}",
            cfg.cost_rate, cfg.size, cfg.horizon_m
        )));
    }
    let m = cfg.horizon_m as usize;
    let mut positions = Vec::with_capacity(predictions.len());
    for p in predictions {
        if p.prediction_index == 0 {
            return Err(BacktestError::MissingBar { index: 0 });
        }
        let open_index = p.prediction_index - 1;
        let close_index = open_index + m;
        if close_index >= table.n_rows() {
            return Err(BacktestError::MissingBar { index: close_index });
        }
        let open_price = fill_price(table, open_index, cfg.fill);
        let close_price = fill_price(table, close_index, cfg.fill);
        let side = if p.predicted.is_up() { Side::Long } else { Side::Short };
        let gross_return = match side {
            Side::Long => close_price / open_price - 1.0,
            Side::Short => match cfg.short_mode {
                ShortMode::OpenOverClose => open_price / close_price - 1.0,
                ShortMode::Symmetric => -(close_price / open_price - 1.0),
            },
        };
        positions.push(Position {
            side,
            open_index,
            close_index,
            open_price,
            close_price,
            size: cfg.size,
            cost_rate: cfg.cost_rate,
            gross_return,
            net_return: gross_return - 2.0 * cfg.cost_rate,
            correct: p.predicted == p.actual,
        });
    }

    let mut gross = 0.0;
    let mut cost = 0.0;
    let mut net = 0.0;
    for pos in &positions {
        gross += pos.gross_return * pos.size;
        cost += 2.0 * pos.cost_rate * pos.size;
        net += pos.net_return * pos.size;
    }

    // equity booked at close: walk the open bars, folding in every position
    // whose close bar has passed
    let mut close_events: Vec<(usize, f64)> =
        positions.iter().map(|p| (p.close_index, p.net_return * p.size)).collect();
    close_events.sort_by_key(|&(close, _)| close);
    let mut equity_bars = Vec::with_capacity(positions.len());
    let mut equity_curve = Vec::with_capacity(positions.len());
    let mut booked = 0.0;
    let mut next_event = 0;
    for pos in &positions {
        while next_event < close_events.len() && close_events[next_event].0 <= pos.open_index {
            booked += close_events[next_event].1;
            next_event += 1;
        }
        equity_bars.push(pos.open_index);
        equity_curve.push(booked);
    }

    let hits = positions.iter().filter(|p| p.correct).count();
    let trade_count = positions.len();
    Ok(BacktestLedger {
        hit_rate: if trade_count == 0 { 0.0 } else { hits as f64 / trade_count as f64 },
        positions,
        equity_bars,
        equity_curve,
        gross_return: gross,
        total_cost: cost,
        net_return: net,
        trade_count,
    })
}

/// Largest peak-to-trough drop of an additive equity curve.
pub fn max_drawdown(curve: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in curve {
        peak = peak.max(v);
        worst = worst.max(peak - v);
    }
    if curve.is_empty() {
        0.0
    } else {
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub strategy_return: f64,
    pub benchmark_return: f64,
    pub strategy_max_drawdown: f64,
    pub benchmark_max_drawdown: f64,
    /// Buy-and-hold equity sampled at the ledger's equity bars.
    pub benchmark_curve: Vec<f64>,
}

/// Buy-and-hold comparison over the ledger's bar span (the whole table when
/// the ledger is empty), using the same fill prices as the simulation.
pub fn compare_benchmark(
    ledger: &BacktestLedger,
    table: &FeatureTable,
    fill: FillPolicy,
) -> BenchmarkReport {
    let bars: Vec<usize> = if ledger.equity_bars.is_empty() {
        (0..table.n_rows()).collect()
    } else {
        ledger.equity_bars.clone()
    };
    let base = fill_price(table, bars[0], fill);
    let benchmark_curve: Vec<f64> =
        bars.iter().map(|&b| fill_price(table, b, fill) / base - 1.0).collect();
    let last_close = ledger.positions.last().map(|p| p.close_index);
    let benchmark_return = match last_close {
        // extend to the final close so both strategies span the same bars
        Some(close) => fill_price(table, close, fill) / base - 1.0,
        None => *benchmark_curve.last().unwrap_or(&0.0),
    };
    BenchmarkReport {
        strategy_return: ledger.net_return,
        benchmark_return,
        strategy_max_drawdown: max_drawdown(&ledger.equity_curve),
        benchmark_max_drawdown: max_drawdown(&benchmark_curve),
        benchmark_curve,
    }
}

/// One row per position.
pub fn write_ledger_csv(path: &Path, ledger: &BacktestLedger) -> Result<(), BacktestError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "side,open_index,close_index,open_price,close_price,size,cost_rate,gross_return,net_return,correct"
    )?;
    for p in &ledger.positions {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            match p.side {
                Side::Long => "long",
                Side::Short => "short",
            },
            p.open_index,
            p.close_index,
            p.open_price,
            p.close_price,
            p.size,
            p.cost_rate,
            p.gross_return,
            p.net_return,
            p.correct
        )?;
    }
    Ok(())
}

/// bar_index, strategy_equity, benchmark_equity
pub fn write_equity_csv(
    path: &Path,
    ledger: &BacktestLedger,
    benchmark: &BenchmarkReport,
) -> Result<(), BacktestError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "bar_index,strategy_equity,benchmark_equity")?;
    for ((bar, eq), bench) in
        ledger.equity_bars.iter().zip(&ledger.equity_curve).zip(&benchmark.benchmark_curve)
    {
        writeln!(out, "{bar},{eq},{bench}")?;
    }
    Ok(())
}
