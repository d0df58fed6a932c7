//! # flowcast
//!
//! A desk-scale pipeline for predicting short-horizon price movement from
//! trade-by-trade exchange data:
//!
//! - `trade`: read, write, fetch, and synthesize trade records
//! - `bars`: resample trades into fixed time-interval feature bars with
//!   forward returns and threshold labels
//! - `stationarity`: augmented Dickey-Fuller testing and differencing of
//!   feature columns
//! - `dataset`: disconnected train/validation period splits, offset-tiled
//!   trailing windows, per-window min-max normalization
//! - `neural`: a from-scratch single-layer LSTM classifier trained by
//!   backpropagation through time with Adam and early stopping
//! - `search`: resumable grid search over window length and hidden units
//! - `backtest`: chronological out-of-sample evaluation, rolling accuracy,
//!   and a costed long/short trading simulation
//! - `pipeline`: reproducible experiment stages behind the `flowcast` binary
//!
//! ## Example
//!
//! ```no_run
//! use flowcast::bars::BarConfig;
//! use flowcast::trade::synth::{SynthConfig, synth_trades};
//!
//! let stream = synth_trades(&SynthConfig::random_walk(7, 100_000)).unwrap();
//! let bars = flowcast::bars::resample(&stream.trades, &BarConfig::new(60_000, vec![15, 30]).unwrap()).unwrap();
//! println!("{} bars", bars.len());
//! ```
//!
//! Each major capability has a runnable example under `examples/`.

pub mod backtest;
pub mod bars;
pub mod columnar;
pub mod dataset;
pub mod neural;
pub mod pipeline;
pub mod plot;
pub mod search;
pub mod stationarity;
pub mod trade;

pub use backtest::{BacktestLedger, Position, RollingAccuracy};
pub use bars::{BarConfig, IntervalBar, LabelConfig};
pub use dataset::{OffsetPlan, Period, SplitConfig, WindowExample};
pub use neural::{LstmParams, TrainConfig};
pub use search::{GridResult, GridSpec};
pub use stationarity::AdfResult;
pub use trade::{Trade, TradeStreamMeta};

/// Crate version, recorded in stage manifests for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
