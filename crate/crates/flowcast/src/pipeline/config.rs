//! Experiment configuration: one TOML file with a section per stage, every
//! value typed, every seed explicit. Loading resolves all defaults up front
//! so the manifest records exactly what ran; validation reports every
//! violated constraint at once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backtest::{FillPolicy, ShortMode};
use crate::neural::TrainConfig;
use crate::stationarity::{AdfConfig, Significance};
use crate::trade::synth::{Regime, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub synth: SynthSection,
    pub fetch: FetchSection,
    pub bars: BarsSection,
    pub label: LabelSection,
    pub stationarity: StationaritySection,
    pub split: SplitSection,
    pub offsets: OffsetsSection,
    pub train: TrainSection,
    pub grid: GridSection,
    pub backtest: BacktestSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub instrument: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { instrument: "SYNTH".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "synth", "csv", or "fetch".
    pub source: String,
    /// Trade CSV path when source = "csv".
    pub trades_csv: Option<String>,
    /// Fetch range when source = "fetch".
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { source: "synth".into(), trades_csv: None, start_ms: None, end_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub seed: u64,
    pub intervals: u32,
    pub interval_ms: i64,
    pub trades_per_interval: u32,
    pub base_price: f64,
    pub base_amount: f64,
    /// "planted" or "random-walk".
    pub regime: String,
    pub step_sd: f64,
    pub strength: f64,
    pub taker_bias: f64,
    /// Horizon of the planted signal; None resolves to label.horizon_m.
    pub planted_horizon: Option<u32>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            seed: 7,
            intervals: 3000,
            interval_ms: 1000,
            trades_per_interval: 8,
            base_price: 100.0,
            base_amount: 0.05,
            regime: "planted".into(),
            step_sd: 0.002,
            strength: 0.01,
            taker_bias: 0.4,
            planted_horizon: None,
        }
    }
}

impl SynthSection {
    pub fn to_synth_config(&self) -> SynthConfig {
        let regime = if self.regime == "random-walk" {
            Regime::RandomWalk { step_sd: self.step_sd }
        } else {
            Regime::PlantedSignal {
                horizon: self.planted_horizon.unwrap_or(1),
                strength: self.strength,
                taker_bias: self.taker_bias,
            }
        };
        SynthConfig {
            seed: self.seed,
            intervals: self.intervals,
            interval_ms: self.interval_ms,
            trades_per_interval: self.trades_per_interval,
            base_price: self.base_price,
            base_amount: self.base_amount,
            regime,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FetchSection {
    /// Overrides the endpoint env var when set.
    pub endpoint: Option<String>,
    pub page_limit: u32,
    pub min_delay_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for FetchSection {
    fn default() -> Self {
        Self { endpoint: None, page_limit: 1000, min_delay_ms: 250, max_retries: 5, backoff_ms: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarsSection {
    /// Interval length l in milliseconds.
    pub interval_ms: i64,
    /// Forward-return horizons; label.horizon_m is appended when absent.
    pub horizons: Vec<u32>,
}

impl Default for BarsSection {
    fn default() -> Self {
        Self { interval_ms: 1000, horizons: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    pub horizon_m: u32,
    pub epsilon: f64,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self { horizon_m: 3, epsilon: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationaritySection {
    /// "p01", "p05", or "p10".
    pub significance: String,
    pub max_lag: Option<usize>,
}

impl Default for StationaritySection {
    fn default() -> Self {
        Self { significance: "p05".into(), max_lag: None }
    }
}

impl StationaritySection {
    pub fn to_adf_config(&self) -> AdfConfig {
        let significance = match self.significance.as_str() {
            "p01" => Significance::P01,
            "p10" => Significance::P10,
            _ => Significance::P05,
        };
        AdfConfig { max_lag: self.max_lag, significance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Validation period count.
    pub p: usize,
    /// Validation period length in bars; 0 resolves to 3 * train.window_t.
    pub q: usize,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { p: 8, q: 0, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffsetsSection {
    pub fraction: f64,
    pub seed: u64,
}

impl Default for OffsetsSection {
    fn default() -> Self {
        Self { fraction: 0.25, seed: 13 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Trailing window length T in bars.
    pub window_t: usize,
    /// Hidden units N.
    pub hidden_n: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub lr_initial: f64,
    pub lr_decay: f64,
    pub lr_floor: f64,
    pub lr_step_epochs: usize,
    pub batch_schedule: Vec<usize>,
    pub dropout_rate: f64,
    pub patience: usize,
    pub divergence_factor: f64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            window_t: 12,
            hidden_n: t.hidden_n,
            max_epochs: t.max_epochs,
            seed: 17,
            lr_initial: t.lr_initial,
            lr_decay: t.lr_decay,
            lr_floor: t.lr_floor,
            lr_step_epochs: t.lr_step_epochs,
            batch_schedule: t.batch_schedule,
            dropout_rate: t.dropout_rate,
            patience: t.patience,
            divergence_factor: t.divergence_factor,
            clip_norm: t.clip_norm,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden_n: self.hidden_n,
            max_epochs: self.max_epochs,
            seed: self.seed,
            lr_initial: self.lr_initial,
            lr_decay: self.lr_decay,
            lr_floor: self.lr_floor,
            lr_step_epochs: self.lr_step_epochs,
            batch_schedule: self.batch_schedule.clone(),
            dropout_rate: self.dropout_rate,
            patience: self.patience,
            divergence_factor: self.divergence_factor,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub t_values: Vec<usize>,
    pub n_values: Vec<usize>,
    /// Validation length for grid splits; None resolves to 3 * max(t_values).
    pub split_q: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { t_values: vec![8, 12], n_values: vec![4, 8], split_q: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    /// Per-order cost as a fraction of notional.
    pub cost_rate: f64,
    pub size: f64,
    /// "last-trade" or "vwap".
    pub fill: String,
    /// "open-over-close" or "symmetric".
    pub short_mode: String,
    /// Rolling-accuracy window; None resolves to one day of bars, clamped
    /// to the prediction count (the resolved value lands in eval.json).
    pub rolling_window_bars: Option<usize>,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            cost_rate: 0.0003,
            size: 1.0,
            fill: "last-trade".into(),
            short_mode: "open-over-close".into(),
            rolling_window_bars: None,
        }
    }
}

impl BacktestSection {
    pub fn fill_policy(&self) -> FillPolicy {
        if self.fill == "vwap" {
            FillPolicy::Vwap
        } else {
            FillPolicy::LastTrade
        }
    }

    pub fn short_mode(&self) -> ShortMode {
        if self.short_mode == "symmetric" {
            ShortMode::Symmetric
        } else {
            ShortMode::OpenOverClose
        }
    }
}

impl ExperimentConfig {
    /// Parses, resolves defaults, and validates; the returned value has no
    /// unresolved options left except runtime-sized ones.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::ConfigInvalid {
            violations: vec![format!("cannot read config {}: {e}", path.display())],
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| PipelineError::ConfigInvalid {
                violations: vec![format!("config parse error: {e}")],
            })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Materializes every dependent default in place.
    pub fn resolve(&mut self) {
        if self.synth.planted_horizon.is_none() {
            self.synth.planted_horizon = Some(self.label.horizon_m);
        }
        if !self.bars.horizons.contains(&self.label.horizon_m) {
            self.bars.horizons.push(self.label.horizon_m);
        }
        self.bars.horizons.sort_unstable();
        self.bars.horizons.dedup();
        if self.split.q == 0 {
            self.split.q = 3 * self.train.window_t;
        }
        if self.grid.split_q.is_none() {
            let max_t = self.grid.t_values.iter().copied().max().unwrap_or(1);
            self.grid.split_q = Some(3 * max_t);
        }
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut violations = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                violations.push(msg);
            }
        };

        check(
            matches!(self.data.source.as_str(), "synth" | "csv" | "fetch"),
            format!("data.source must be synth, csv, or fetch, got '{}'", self.data.source),
        );
        if self.data.source == "csv" {
            check(self.data.trades_csv.is_some(), "data.trades_csv required for csv source".into());
        }
        if self.data.source == "fetch" {
            match (self.data.start_ms, self.data.end_ms) {
                (Some(s), Some(e)) => check(s < e, format!("fetch range start {s} >= end {e}")),
                _ => check(false, "data.start_ms and data.end_ms required for fetch source".into()),
            }
        }
        check(
            matches!(self.synth.regime.as_str(), "planted" | "random-walk"),
            format!("synth.regime must be planted or random-walk, got '{}'", self.synth.regime),
        );
        check(self.bars.interval_ms > 0, format!("bars.interval_ms must be positive, got {}", self.bars.interval_ms));
        check(self.label.horizon_m >= 1, "label.horizon_m must be >= 1".into());
        check(
            self.bars.horizons.contains(&self.label.horizon_m),
            format!("bars.horizons {:?} must include label.horizon_m {}", self.bars.horizons, self.label.horizon_m),
        );
        check(
            self.label.epsilon.is_finite() && self.label.epsilon >= 0.0,
            format!("label.epsilon must be finite and >= 0, got {}", self.label.epsilon),
        );
        check(
            matches!(self.stationarity.significance.as_str(), "p01" | "p05" | "p10"),
            format!("stationarity.significance must be p01, p05, or p10, got '{}'", self.stationarity.significance),
        );
        check(self.train.window_t >= 1, "train.window_t must be >= 1".into());
        check(
            self.split.q > self.train.window_t,
            format!("split.q {} must exceed train.window_t {}", self.split.q, self.train.window_t),
        );
        check(
            (0.10..=0.50).contains(&self.offsets.fraction),
            format!("offsets.fraction must lie in [0.10, 0.50], got {}", self.offsets.fraction),
        );
        if let Err(e) = self.train.to_train_config().validate() {
            check(false, format!("train: {e}"));
        }
        check(!self.grid.t_values.is_empty(), "grid.t_values must be non-empty".into());
        check(!self.grid.n_values.is_empty(), "grid.n_values must be non-empty".into());
        if let (Some(q), Some(&max_t)) = (self.grid.split_q, self.grid.t_values.iter().max()) {
            check(q > max_t, format!("grid.split_q {q} must exceed the largest grid T {max_t}"));
        }
        check(
            self.backtest.cost_rate >= 0.0,
            format!("backtest.cost_rate must be >= 0, got {}", self.backtest.cost_rate),
        );
        check(self.backtest.size > 0.0, format!("backtest.size must be positive, got {}", self.backtest.size));
        check(
            matches!(self.backtest.fill.as_str(), "last-trade" | "vwap"),
            format!("backtest.fill must be last-trade or vwap, got '{}'", self.backtest.fill),
        );
        check(
            matches!(self.backtest.short_mode.as_str(), "open-over-close" | "symmetric"),
            format!("backtest.short_mode must be open-over-close or symmetric, got '{}'", self.backtest.short_mode),
        );

        if violations.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::ConfigInvalid { violations })
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
