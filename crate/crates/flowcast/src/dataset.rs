//! Train/validation splitting, window tiling, and example materialization.
//!
//! The bar table is cut into disconnected validation periods of fixed length
//! at seeded-random positions; the leftovers form training periods. Within a
//! period, non-intersecting trailing windows are tiled at a set of offsets,
//! always including offset 0 and the period-length-mod-T offset: the first
//! anchors coverage at the period start, the second makes the final window
//! end exactly at the period end, and together they cover every bar.
//!
//! Index convention: a window with right edge `t` covers table rows
//! [t-T, t); its label is the forward return of row t-1, the last row inside
//! the window.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bars::{IntervalBar, Label, LabelConfig};
use crate::columnar::{ColumnSet, ColumnarError};
use crate::stationarity::{self, AdfConfig, StationarityError, StationarityReport};

/// Canonical model-input columns, in table order.
pub const FEATURE_NAMES: [&str; 7] = [
    "n_trades",
    "volume",
    "active_buy_volume",
    "amplitude",
    "price_change",
    "vwap",
    "taker_ratio",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot place {p} validation periods of length {q} in {n_bars} bars")]
    Infeasible { p: usize, q: usize, n_bars: usize },
    #[error("offset fraction must lie in [0.10, 0.50], got {0}")]
    InvalidFraction(f64),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("window contains non-finite values")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("example file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Stationarity(#[from] StationarityError),
    #[error(transparent)]
    Columnar(#[from] ColumnarError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeriodKind {
    Training,
    Validation,
}

/// Half-open bar-index range of one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start_index: usize,
    pub end_index: usize,
    pub kind: PeriodKind,
}

impl Period {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start_index..self.end_index).contains(&index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Number of validation periods.
    pub p: usize,
    /// Validation period length in bars; must exceed the window length.
    pub q: usize,
    /// Trailing window length T; training fragments shorter than this are
    /// discarded because they cannot host a single window.
    pub window_t: usize,
    pub seed: u64,
}

impl SplitConfig {
    fn validate(&self, n_bars: usize) -> Result<(), DatasetError> {
        if self.window_t == 0 {
            return Err(DatasetError::InvalidConfig("window_t must be >= 1".into()));
        }
        if self.q <= self.window_t {
            return Err(DatasetError::InvalidConfig(format!(
                "validation length q ({}) must exceed window length T ({})",
                self.q, self.window_t
            )));
        }
        if self.p * self.q >= n_bars {
            return Err(DatasetError::Infeasible { p: self.p, q: self.q, n_bars });
        }
        Ok(())
    }
}

/// Places `p` validation periods of length `q` at seeded-random
/// non-overlapping positions; the complement becomes training periods, minus
/// fragments shorter than the window length. Output is sorted by start.
pub fn make_split(n_bars: usize, cfg: &SplitConfig) -> Result<Vec<Period>, DatasetError> {
    cfg.validate(n_bars)?;
    if n_bars == 0 {
        return Err(DatasetError::EmptyInput);
    }

    let mut starts: Vec<usize> = Vec::with_capacity(cfg.p);
    if cfg.p > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // Sorted draws from the free slack map to non-overlapping starts
        // (start i = draw i + i*q), so any density below saturation places
        // without search.
        let slack = n_bars - cfg.p * cfg.q;
        let mut draws: Vec<usize> =
            (0..cfg.p).map(|_| rng.gen_range(0..=slack)).collect();
        draws.sort_unstable();
        starts.extend(draws.into_iter().enumerate().map(|(i, u)| u + i * cfg.q));
    }

    let mut periods = Vec::with_capacity(2 * cfg.p + 1);
    let mut cursor = 0usize;
    for &s in &starts {
        if s > cursor && s - cursor >= cfg.window_t {
            periods.push(Period { start_index: cursor, end_index: s, kind: PeriodKind::Training });
        }
        periods.push(Period { start_index: s, end_index: s + cfg.q, kind: PeriodKind::Validation });
        cursor = s + cfg.q;
    }
    if n_bars > cursor && n_bars - cursor >= cfg.window_t {
        periods.push(Period { start_index: cursor, end_index: n_bars, kind: PeriodKind::Training });
    }
    Ok(periods)
}

/// The offsets chosen for tiling one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetPlan {
    pub period_length: usize,
    pub window_t: usize,
    /// Always contains 0 and period_length mod T.
    pub selected_offsets: BTreeSet<usize>,
    pub fraction: f64,
    pub seed: u64,
}

/// Selects max(1, floor(fraction * T)) offsets from [0, T-1] without
/// replacement, deterministically per seed. Offset `period_length mod T` is
/// always included (the last window then ends exactly at the period end), and
/// offset 0 is always included (nothing else can cover the first bars); when
/// the two coincide the minimum fraction yields exactly that single offset.
pub fn plan_offsets(
    period_length: usize,
    window_t: usize,
    fraction: f64,
    seed: u64,
) -> Result<OffsetPlan, DatasetError> {
    if !(0.10..=0.50).contains(&fraction) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    if window_t == 0 || period_length < window_t {
        return Err(DatasetError::InvalidConfig(format!(
            "period length {period_length} cannot host windows of length {window_t}"
        )));
    }

    let mandatory = period_length % window_t;
    let mut selected = BTreeSet::from([0usize, mandatory]);
    let target = ((fraction * window_t as f64).floor() as usize).max(1).max(selected.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while selected.len() < target.min(window_t) {
        selected.insert(rng.gen_range(0..window_t));
    }

    Ok(OffsetPlan { period_length, window_t, selected_offsets: selected, fraction, seed })
}

/// Right edges t = period.start + offset + k*T for k = 1, 2, ... while
/// t <= period.end and t <= max_edge. The window at t covers [t-T, t); its
/// labeled row is t-1, so max_edge = n_rows - horizon keeps labels defined.
pub fn windows_for_offset(
    period: &Period,
    window_t: usize,
    offset: usize,
    max_edge: usize,
) -> Vec<usize> {
    assert!(offset < window_t, "offset {offset} out of range for T = {window_t}");
    let mut edges = Vec::new();
    let mut t = period.start_index + offset + window_t;
    while t <= period.end_index && t <= max_edge {
        edges.push(t);
        t += window_t;
    }
    edges
}

/// Column-wise min-max scaling of one window to [0,1] using the window's own
/// extrema; constant columns become all zeros.
pub fn normalize_window(raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DatasetError> {
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DatasetError::NonFinite);
    }
    let rows = raw.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = raw[0].len();
    let mut out = vec![vec![0.0; cols]; rows];
    for c in 0..cols {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in raw {
            lo = lo.min(row[c]);
            hi = hi.max(row[c]);
        }
        if hi > lo {
            let span = hi - lo;
            for r in 0..rows {
                out[r][c] = (raw[r][c] - lo) / span;
            }
        }
    }
    Ok(out)
}

/// One normalized training/validation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowExample {
    /// Row-major T x F matrix, every column in [0,1].
    pub features: Vec<Vec<f64>>,
    pub label: Label,
    /// Exclusive right edge t of the window; the labeled bar is t-1.
    pub prediction_index: usize,
}

/// Bar features arranged for windowing, with label and fill data kept
/// row-aligned through stationarization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// Column-major feature matrix, FEATURE_NAMES order.
    pub features: Vec<Vec<f64>>,
    /// Raw (never differenced) vwap per row, for fills and returns.
    pub vwap: Vec<f64>,
    /// Last trade price per row, for the last-trade fill policy.
    pub last_price: Vec<f64>,
    pub group_index: Vec<i64>,
    /// Forward return per configured horizon; NaN where undefined.
    pub fwd: Vec<(u32, Vec<f64>)>,
    /// Which feature columns hold first differences after stationarization.
    pub differenced: [bool; 7],
    pub interval_ms: i64,
}

impl FeatureTable {
    pub fn from_bars(bars: &[IntervalBar], interval_ms: i64) -> Result<Self, DatasetError> {
        if bars.is_empty() {
            return Err(DatasetError::EmptyInput);
        }
        let features = vec![
            bars.iter().map(|b| f64::from(b.n_trades)).collect(),
            bars.iter().map(|b| b.volume).collect(),
            bars.iter().map(|b| b.active_buy_volume).collect(),
            bars.iter().map(|b| b.amplitude).collect(),
            bars.iter().map(|b| b.price_change).collect(),
            bars.iter().map(|b| b.vwap).collect(),
            bars.iter().map(|b| b.taker_ratio).collect(),
        ];
        let mut horizons: Vec<u32> =
            bars.iter().flat_map(|b| b.fwd_return.keys().copied()).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let fwd = horizons
            .into_iter()
            .map(|m| {
                let col = bars
                    .iter()
                    .map(|b| b.fwd_return.get(&m).copied().unwrap_or(f64::NAN))
                    .collect();
                (m, col)
            })
            .collect();
        Ok(Self {
            features,
            vwap: bars.iter().map(|b| b.vwap).collect(),
            last_price: bars.iter().map(|b| b.last_price).collect(),
            group_index: bars.iter().map(|b| b.group_index).collect(),
            fwd,
            differenced: [false; 7],
            interval_ms,
        })
    }

    /// Tests every feature column, differences the failing ones, and drops
    /// the first row of the whole table when anything was differenced so all
    /// row-aligned series stay in step.
    pub fn stationarize(&mut self, cfg: &AdfConfig) -> Result<StationarityReport, DatasetError> {
        let named: Vec<(String, Vec<f64>)> = FEATURE_NAMES
            .iter()
            .zip(&self.features)
            .map(|(n, c)| (n.to_string(), c.clone()))
            .collect();
        let (out, report) = stationarity::stationarize(&named, cfg)?;
        self.features = out.into_iter().map(|(_, c)| c).collect();
        for (i, decision) in report.columns.iter().enumerate() {
            self.differenced[i] = decision.decision == "difference";
        }
        if report.dropped_first_row {
            self.vwap.remove(0);
            self.last_price.remove(0);
            self.group_index.remove(0);
            for (_, col) in &mut self.fwd {
                col.remove(0);
            }
        }
        Ok(report)
    }

    /// Applies a stored differencing mask (from a trained model) instead of
    /// re-testing; drops the first row iff any column is differenced.
    pub fn apply_differencing(&mut self, mask: [bool; 7]) -> Result<(), DatasetError> {
        if mask.iter().all(|d| !d) {
            self.differenced = mask;
            return Ok(());
        }
        for (col, &diff) in self.features.iter_mut().zip(&mask) {
            if diff {
                *col = stationarity::difference(col)?;
            } else {
                col.remove(0);
            }
        }
        self.vwap.remove(0);
        self.last_price.remove(0);
        self.group_index.remove(0);
        for (_, col) in &mut self.fwd {
            col.remove(0);
        }
        self.differenced = mask;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.vwap.len()
    }

    pub fn horizons(&self) -> Vec<u32> {
        self.fwd.iter().map(|(m, _)| *m).collect()
    }

    /// Raw (unnormalized) T x F window with right edge `t_edge`.
    pub fn window_matrix(&self, t_edge: usize, window_t: usize) -> Vec<Vec<f64>> {
        (t_edge - window_t..t_edge)
            .map(|r| self.features.iter().map(|col| col[r]).collect())
            .collect()
    }

    /// Label of the bar at `row` for the given horizon/threshold, or None
    /// when the forward return is undefined there.
    pub fn label_at(&self, row: usize, cfg: &LabelConfig) -> Option<Label> {
        let col = &self.fwd.iter().find(|(m, _)| *m == cfg.horizon_m)?.1;
        let c = col[row];
        if c.is_nan() {
            return None;
        }
        Some(if c >= cfg.epsilon { Label::Up } else { Label::Down })
    }

    /// Largest valid window right edge for the horizon: the labeled row t-1
    /// must still have a forward return, i.e. t <= n_rows - m.
    pub fn max_edge(&self, horizon_m: u32) -> usize {
        self.n_rows().saturating_sub(horizon_m as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetConfig {
    /// Share of the T possible offsets to select, in [0.10, 0.50].
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSets {
    pub training: Vec<WindowExample>,
    pub validation: Vec<WindowExample>,
    pub training_balance: Option<f64>,
    pub validation_balance: Option<f64>,
}

fn period_seed(base: u64, period: &Period) -> u64 {
    base ^ (period.start_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn balance(examples: &[WindowExample]) -> Option<f64> {
    if examples.is_empty() {
        return None;
    }
    Some(examples.iter().filter(|e| e.label.is_up()).count() as f64 / examples.len() as f64)
}

/// Materializes normalized, labeled windows for every period. Windows never
/// cross period boundaries; ordering is canonical (period, offset, edge), so
/// the result is a pure function of (table, periods, configs).
pub fn build_examples(
    table: &FeatureTable,
    periods: &[Period],
    window_t: usize,
    label_cfg: &LabelConfig,
    offsets: &OffsetConfig,
) -> Result<ExampleSets, DatasetError> {
    let max_edge = table.max_edge(label_cfg.horizon_m);
    let mut training = Vec::new();
    let mut validation = Vec::new();

    for period in periods {
        if period.len() < window_t {
            continue;
        }
        let plan = plan_offsets(
            period.len(),
            window_t,
            offsets.fraction,
            period_seed(offsets.seed, period),
        )?;
        for &offset in &plan.selected_offsets {
            for t_edge in windows_for_offset(period, window_t, offset, max_edge) {
                let label = match table.label_at(t_edge - 1, label_cfg) {
                    Some(l) => l,
                    None => continue,
                };
                let features = normalize_window(&table.window_matrix(t_edge, window_t))?;
                let example = WindowExample { features, label, prediction_index: t_edge };
                match period.kind {
                    PeriodKind::Training => training.push(example),
                    PeriodKind::Validation => validation.push(example),
                }
            }
        }
    }

    let training_balance = balance(&training);
    let validation_balance = balance(&validation);
    Ok(ExampleSets { training, validation, training_balance, validation_balance })
}

/// Encodes examples as named columns: prediction_index, label_up, then one
/// column per (window row, feature) named `r<row>_<feature>`.
pub fn examples_to_columns(examples: &[WindowExample]) -> Result<ColumnSet, DatasetError> {
    let mut set = ColumnSet::new();
    set.push("prediction_index", examples.iter().map(|e| e.prediction_index as f64).collect())?;
    set.push(
        "label_up",
        examples.iter().map(|e| if e.label.is_up() { 1.0 } else { 0.0 }).collect(),
    )?;
    let window_t = examples.first().map_or(0, |e| e.features.len());
    for r in 0..window_t {
        for (f, name) in FEATURE_NAMES.iter().enumerate() {
            let col = examples.iter().map(|e| e.features[r][f]).collect();
            set.push(&format!("r{r}_{name}"), col)?;
        }
    }
    Ok(set)
}

pub fn examples_from_columns(set: &ColumnSet) -> Result<Vec<WindowExample>, DatasetError> {
    let need = |name: &str| {
        set.column(name).ok_or_else(|| DatasetError::Malformed(format!("missing column '{name}'")))
    };
    let pred = need("prediction_index")?;
    let label_up = need("label_up")?;
    let mut window_t = 0;
    while set.column(&format!("r{window_t}_{}", FEATURE_NAMES[0])).is_some() {
        window_t += 1;
    }
    let mut examples = Vec::with_capacity(set.rows());
    for i in 0..set.rows() {
        let mut features = Vec::with_capacity(window_t);
        for r in 0..window_t {
            let mut row = Vec::with_capacity(FEATURE_NAMES.len());
            for name in FEATURE_NAMES {
                row.push(need(&format!("r{r}_{name}"))?[i]);
            }
            features.push(row);
        }
        examples.push(WindowExample {
            features,
            label: if label_up[i] != 0.0 { Label::Up } else { Label::Down },
            prediction_index: pred[i] as usize,
        });
    }
    Ok(examples)
}
