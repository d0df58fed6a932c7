//! Fixed-time-interval feature bars.
//!
//! A trade stream is partitioned by group index i = floor(t / l) for an
//! interval length l in milliseconds. Each group becomes one [`IntervalBar`]
//! with seven features: trade count, volume, active-buy volume, amplitude,
//! price change, amount-weighted mean price (vwap), and taker ratio.
//! Forward returns compare vwap m bars ahead against the current bar and are
//! attached before any windowing so labels can be read off any position.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::columnar::{ColumnSet, ColumnarError};
use crate::trade::Trade;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarConfig {
    /// Interval length l in milliseconds.
    pub interval_ms: i64,
    /// Forward-return horizons m, in bars.
    pub horizons: Vec<u32>,
}

impl BarConfig {
    pub fn new(interval_ms: i64, horizons: Vec<u32>) -> Result<Self, BarsError> {
        let cfg = Self { interval_ms, horizons };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BarsError> {
        if self.interval_ms <= 0 {
            return Err(BarsError::InvalidConfig(format!(
                "interval_ms must be positive, got {}",
                self.interval_ms
            )));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(BarsError::InvalidConfig("horizons must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// One fixed-time interval of aggregated trades.
///
/// For an empty interval every flow feature is zero, `is_empty` is set, and
/// `vwap`/`last_price` carry the last non-empty bar's values forward so
/// forward returns stay defined. The first bar of a resampled stream always
/// contains its first trade, so the carry always has a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBar {
    pub group_index: i64,
    pub n_trades: u32,
    /// Sum of trade amounts.
    pub volume: f64,
    /// Sum of amounts with is_buyer_maker = false (active buys).
    pub active_buy_volume: f64,
    /// Max trade price minus min trade price.
    pub amplitude: f64,
    /// Last trade price minus first trade price.
    pub price_change: f64,
    /// Amount-weighted mean trade price; the "price" of the interval.
    pub vwap: f64,
    /// Price of the interval's last trade (carried forward when empty).
    pub last_price: f64,
    /// active_buy_volume / volume; 0 for empty bars.
    pub taker_ratio: f64,
    pub is_empty: bool,
    /// Horizon m -> vwap(t+m)/vwap(t) - 1. Absent past the end of the series.
    pub fwd_return: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub horizon_m: u32,
    /// Return threshold epsilon separating the two classes.
    pub epsilon: f64,
}

/// Class of a labeled bar: `Up` when the forward return clears the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Up,
    Down,
}

impl Label {
    /// One-hot target pair: Up = [1,0], Down = [0,1].
    pub fn targets(self) -> [f64; 2] {
        match self {
            Label::Up => [1.0, 0.0],
            Label::Down => [0.0, 1.0],
        }
    }

    pub fn is_up(self) -> bool {
        matches!(self, Label::Up)
    }
}

#[derive(Debug, Error)]
pub enum BarsError {
    #[error("trades not sorted by timestamp at index {index}")]
    UnsortedInput { index: usize },
    #[error("invalid bar config: {0}")]
    InvalidConfig(String),
    #[error("bar {group_index} has no forward return for horizon {horizon}")]
    MissingReturn { group_index: i64, horizon: u32 },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Columnar(#[from] ColumnarError),
    #[error("bar file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Compensated (Kahan) accumulator; keeps bar sums independent of magnitude
/// drift so conservation holds to 1e-9 relative regardless of stream length.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn total(self) -> f64 {
        self.sum
    }
}

/// Interval group of a timestamp: floor(timestamp_ms / interval_ms).
pub fn group_index(timestamp_ms: i64, interval_ms: i64) -> i64 {
    assert!(interval_ms > 0, "interval_ms must be positive");
    timestamp_ms.div_euclid(interval_ms)
}

struct BarAccumulator {
    group: i64,
    n: u32,
    volume: Kahan,
    active_buy: Kahan,
    price_amount: Kahan,
    min_price: f64,
    max_price: f64,
    first_price: f64,
    last_price: f64,
}

impl BarAccumulator {
    fn new(group: i64, first: &Trade) -> Self {
        let mut acc = Self {
            group,
            n: 0,
            volume: Kahan::default(),
            active_buy: Kahan::default(),
            price_amount: Kahan::default(),
            min_price: first.price,
            max_price: first.price,
            first_price: first.price,
            last_price: first.price,
        };
        acc.push(first);
        acc
    }

    fn push(&mut self, t: &Trade) {
        self.n += 1;
        self.volume.add(t.amount);
        if !t.is_buyer_maker {
            self.active_buy.add(t.amount);
        }
        self.price_amount.add(t.price * t.amount);
        self.min_price = self.min_price.min(t.price);
        self.max_price = self.max_price.max(t.price);
        self.last_price = t.price;
    }

    fn finish(self) -> IntervalBar {
        let volume = self.volume.total();
        IntervalBar {
            group_index: self.group,
            n_trades: self.n,
            volume,
            active_buy_volume: self.active_buy.total(),
            amplitude: self.max_price - self.min_price,
            price_change: self.last_price - self.first_price,
            vwap: self.price_amount.total() / volume,
            last_price: self.last_price,
            taker_ratio: self.active_buy.total() / volume,
            is_empty: false,
            fwd_return: BTreeMap::new(),
        }
    }
}

fn empty_bar(group: i64, carried_vwap: f64, carried_last: f64) -> IntervalBar {
    IntervalBar {
        group_index: group,
        n_trades: 0,
        volume: 0.0,
        active_buy_volume: 0.0,
        amplitude: 0.0,
        price_change: 0.0,
        vwap: carried_vwap,
        last_price: carried_last,
        taker_ratio: 0.0,
        is_empty: true,
        fwd_return: BTreeMap::new(),
    }
}

/// Resamples a timestamp-sorted trade stream into one bar per group index
/// from the first trade's group to the last trade's group, inclusive.
pub fn resample(trades: &[Trade], cfg: &BarConfig) -> Result<Vec<IntervalBar>, BarsError> {
    cfg.validate()?;
    if trades.is_empty() {
        return Ok(Vec::new());
    }

    let mut bars = Vec::new();
    let mut acc = BarAccumulator::new(group_index(trades[0].timestamp, cfg.interval_ms), &trades[0]);

    for (index, pair) in trades.windows(2).enumerate() {
        let (prev, t) = (&pair[0], &pair[1]);
        if t.timestamp < prev.timestamp {
            return Err(BarsError::UnsortedInput { index: index + 1 });
        }
        let group = group_index(t.timestamp, cfg.interval_ms);
        if group == acc.group {
            acc.push(t);
            continue;
        }
        let next_group = acc.group + 1;
        let closed = acc.finish();
        // Gap bars carry the last closed bar's prices forward.
        let carried = (closed.vwap, closed.last_price);
        bars.push(closed);
        for gap in next_group..group {
            bars.push(empty_bar(gap, carried.0, carried.1));
        }
        acc = BarAccumulator::new(group, t);
    }
    bars.push(acc.finish());
    Ok(bars)
}

/// Attaches C_t^(m) = vwap(t+m)/vwap(t) - 1 for every horizon m.
/// Bars within m of the end get no value for that horizon.
pub fn forward_returns(bars: &mut [IntervalBar], horizons: &[u32]) {
    let n = bars.len();
    for t in 0..n {
        for &m in horizons {
            let ahead = t + m as usize;
            if ahead < n {
                let value = bars[ahead].vwap / bars[t].vwap - 1.0;
                bars[t].fwd_return.insert(m, value);
            }
        }
    }
}

/// Resample plus forward returns for every configured horizon.
pub fn resample_with_returns(trades: &[Trade], cfg: &BarConfig) -> Result<Vec<IntervalBar>, BarsError> {
    let mut bars = resample(trades, cfg)?;
    forward_returns(&mut bars, &cfg.horizons);
    Ok(bars)
}

/// One-hot class of a bar: [1,0] when the forward return is at or above the
/// threshold, [0,1] below it. Equality counts as up, making the rule total.
pub fn label(bar: &IntervalBar, cfg: &LabelConfig) -> Result<Label, BarsError> {
    let c = bar.fwd_return.get(&cfg.horizon_m).copied().ok_or(BarsError::MissingReturn {
        group_index: bar.group_index,
        horizon: cfg.horizon_m,
    })?;
    Ok(if c >= cfg.epsilon { Label::Up } else { Label::Down })
}

/// Fraction of up labels.
pub fn class_balance(labels: &[Label]) -> Result<f64, BarsError> {
    if labels.is_empty() {
        return Err(BarsError::EmptyInput);
    }
    Ok(labels.iter().filter(|l| l.is_up()).count() as f64 / labels.len() as f64)
}

const FIXED_COLUMNS: [&str; 10] = [
    "group_index",
    "n_trades",
    "volume",
    "active_buy_volume",
    "amplitude",
    "price_change",
    "vwap",
    "last_price",
    "taker_ratio",
    "is_empty",
];

fn horizon_columns(bars: &[IntervalBar]) -> Vec<u32> {
    let mut horizons: Vec<u32> =
        bars.iter().flat_map(|b| b.fwd_return.keys().copied()).collect();
    horizons.sort_unstable();
    horizons.dedup();
    horizons
}

/// Encodes bars as named f64 columns. Forward-return columns are named
/// `fwd_return_<m>` with NaN where the horizon runs past the series end.
pub fn bars_to_columns(bars: &[IntervalBar]) -> ColumnSet {
    let mut set = ColumnSet::new();
    let grab = |f: &dyn Fn(&IntervalBar) -> f64| bars.iter().map(f).collect::<Vec<_>>();
    set.push("group_index", grab(&|b| b.group_index as f64)).unwrap();
    set.push("n_trades", grab(&|b| f64::from(b.n_trades))).unwrap();
    set.push("volume", grab(&|b| b.volume)).unwrap();
    set.push("active_buy_volume", grab(&|b| b.active_buy_volume)).unwrap();
    set.push("amplitude", grab(&|b| b.amplitude)).unwrap();
    set.push("price_change", grab(&|b| b.price_change)).unwrap();
    set.push("vwap", grab(&|b| b.vwap)).unwrap();
    set.push("last_price", grab(&|b| b.last_price)).unwrap();
    set.push("taker_ratio", grab(&|b| b.taker_ratio)).unwrap();
    set.push("is_empty", grab(&|b| f64::from(u8::from(b.is_empty)))).unwrap();
    for m in horizon_columns(bars) {
        let col = bars
            .iter()
            .map(|b| b.fwd_return.get(&m).copied().unwrap_or(f64::NAN))
            .collect();
        set.push(&format!("fwd_return_{m}"), col).unwrap();
    }
    set
}

pub fn bars_from_columns(set: &ColumnSet) -> Result<Vec<IntervalBar>, BarsError> {
    let need = |name: &str| {
        set.column(name).ok_or_else(|| BarsError::Malformed(format!("missing column '{name}'")))
    };
    for name in FIXED_COLUMNS {
        need(name)?;
    }
    let mut horizons = Vec::new();
    for name in set.names() {
        if let Some(m) = name.strip_prefix("fwd_return_") {
            let m: u32 = m
                .parse()
                .map_err(|_| BarsError::Malformed(format!("bad horizon column '{name}'")))?;
            horizons.push(m);
        }
    }

    let mut bars = Vec::with_capacity(set.rows());
    for i in 0..set.rows() {
        let mut fwd_return = BTreeMap::new();
        for &m in &horizons {
            let v = need(&format!("fwd_return_{m}"))?[i];
            if !v.is_nan() {
                fwd_return.insert(m, v);
            }
        }
        bars.push(IntervalBar {
            group_index: need("group_index")?[i] as i64,
            n_trades: need("n_trades")?[i] as u32,
            volume: need("volume")?[i],
            active_buy_volume: need("active_buy_volume")?[i],
            amplitude: need("amplitude")?[i],
            price_change: need("price_change")?[i],
            vwap: need("vwap")?[i],
            last_price: need("last_price")?[i],
            taker_ratio: need("taker_ratio")?[i],
            is_empty: need("is_empty")?[i] != 0.0,
            fwd_return,
        });
    }
    Ok(bars)
}

/// Writes bars as CSV with the same columns as [`bars_to_columns`]; floats use
/// the shortest decimal form that parses back to the identical value, and
/// absent forward returns are empty fields.
pub fn write_bars_csv<W: Write>(sink: W, bars: &[IntervalBar]) -> Result<(), BarsError> {
    let horizons = horizon_columns(bars);
    let mut writer = csv::Writer::from_writer(sink);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(horizons.iter().map(|m| format!("fwd_return_{m}")));
    writer.write_record(&header).map_err(csv_err)?;
    for b in bars {
        let mut row = vec![
            b.group_index.to_string(),
            b.n_trades.to_string(),
            b.volume.to_string(),
            b.active_buy_volume.to_string(),
            b.amplitude.to_string(),
            b.price_change.to_string(),
            b.vwap.to_string(),
            b.last_price.to_string(),
            b.taker_ratio.to_string(),
            u8::from(b.is_empty).to_string(),
        ];
        for m in &horizons {
            row.push(b.fwd_return.get(m).map(|v| v.to_string()).unwrap_or_default());
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.into_inner().map_err(|e| BarsError::Malformed(e.to_string()))?.flush()?;
    Ok(())
}

pub fn read_bars_csv<R: Read>(source: R) -> Result<Vec<IntervalBar>, BarsError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut set = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        for (i, field) in record.iter().enumerate() {
            let v = if field.is_empty() {
                f64::NAN
            } else {
                field
                    .parse::<f64>()
                    .map_err(|_| BarsError::Malformed(format!("bad number '{field}'")))?
            };
            set[i].push(v);
        }
    }
    let mut columns = ColumnSet::new();
    for (name, col) in headers.iter().zip(set) {
        columns.push(name, col).map_err(|e| BarsError::Malformed(e.to_string()))?;
    }
    bars_from_columns(&columns)
}

fn csv_err(e: csv::Error) -> BarsError {
    BarsError::Malformed(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trade::{read_trades, CsvSchema};
    use proptest::prelude::*;

    const TABLE_CSV: &str = "\
TradeID,Timestamp,Price,Amount,IsBuyerMaker
203767769,1578200400437,7457.18,0.042720,False
203767770,1578200400614,7457.14,0.017739,True
203767771,1578200401809,7457.17,0.107827,False
203767772,1578200401811,7457.16,0.061911,True
203767773,1578200402497,7457.22,0.008068,False
";

    fn trade(id: u64, ts: i64, price: f64, amount: f64, maker: bool) -> Trade {
        Trade { trade_id: id, timestamp: ts, price, amount, is_buyer_maker: maker }
    }

    #[test]
    fn group_index_boundaries() {
        assert_eq!(group_index(1578200400437, 60_000), 26_303_340);
        assert_eq!(group_index(0, 60_000), 0);
        assert_eq!(group_index(59_999, 60_000), 0);
        assert_eq!(group_index(60_000, 60_000), 1);
    }

    /// Hand-summation oracle for the five canonical trades, frozen from a
    /// 50-digit decimal computation.
    #[test]
    fn canonical_five_trades_form_one_bar() {
        let stream = read_trades(TABLE_CSV.as_bytes(), &CsvSchema::default()).unwrap();
        let cfg = BarConfig { interval_ms: 60_000, horizons: vec![15] };
        let bars = resample(&stream.trades, &cfg).unwrap();
        assert_eq!(bars.len(), 1);
        let b = &bars[0];
        assert_eq!(b.group_index, 26_303_340);
        assert_eq!(b.n_trades, 5);
        assert!((b.volume - 0.238265).abs() < 1e-12);
        assert!((b.active_buy_volume - 0.158615).abs() < 1e-12);
        assert!((b.amplitude - 0.08).abs() < 1e-9);
        assert!((b.price_change - 0.04).abs() < 1e-9);
        assert!((b.vwap - 7457.168654103624116).abs() < 1e-9);
        assert!((b.taker_ratio - 0.665708349946488154).abs() < 1e-12);
        assert_eq!(b.last_price, 7457.22);
        assert!(!b.is_empty);
    }

    #[test]
    fn single_trade_bar() {
        let bars = resample(
            &[trade(1, 100, 100.0, 2.0, true)],
            &BarConfig { interval_ms: 60_000, horizons: vec![1] },
        )
        .unwrap();
        let b = &bars[0];
        assert_eq!(b.amplitude, 0.0);
        assert_eq!(b.price_change, 0.0);
        assert_eq!(b.vwap, 100.0);
        assert_eq!(b.taker_ratio, 0.0);
    }

    #[test]
    fn empty_gap_bars_carry_vwap_forward() {
        let trades = [
            trade(1, 10, 100.0, 1.0, false),
            trade(2, 15, 102.0, 1.0, false),
            // group 2 is empty
            trade(3, 35, 110.0, 2.0, true),
        ];
        let bars = resample(&trades, &BarConfig { interval_ms: 10, horizons: vec![1] }).unwrap();
        assert_eq!(bars.iter().map(|b| b.group_index).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(bars[1].is_empty);
        assert_eq!(bars[1].vwap, bars[0].vwap);
        assert_eq!(bars[1].last_price, 102.0);
        assert_eq!(bars[1].volume, 0.0);
        assert_eq!(bars[1].taker_ratio, 0.0);
        assert!(!bars[2].is_empty);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let trades = [trade(1, 100, 1.0, 1.0, false), trade(2, 50, 1.0, 1.0, false)];
        let err =
            resample(&trades, &BarConfig { interval_ms: 10, horizons: vec![1] }).unwrap_err();
        assert!(matches!(err, BarsError::UnsortedInput { index: 1 }));
    }

    #[test]
    fn forward_return_formula_and_absence() {
        let trades = [trade(1, 5, 100.0, 1.0, false), trade(2, 15, 101.0, 1.0, false)];
        let bars =
            resample_with_returns(&trades, &BarConfig { interval_ms: 10, horizons: vec![1] })
                .unwrap();
        assert!((bars[0].fwd_return[&1] - 0.01).abs() < 1e-15);
        assert!(bars[1].fwd_return.is_empty());
    }

    #[test]
    fn constant_vwap_gives_zero_returns() {
        let trades: Vec<Trade> =
            (0..10).map(|k| trade(k + 1, k as i64 * 10 + 1, 50.0, 1.0, false)).collect();
        let bars =
            resample_with_returns(&trades, &BarConfig { interval_ms: 10, horizons: vec![2, 3] })
                .unwrap();
        for b in &bars {
            for v in b.fwd_return.values() {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn label_threshold_and_tie() {
        let mut bar = empty_bar(0, 100.0, 100.0);
        bar.fwd_return.insert(1, 0.001);
        let cfg = LabelConfig { horizon_m: 1, epsilon: 0.0 };
        assert_eq!(label(&bar, &cfg).unwrap(), Label::Up);
        bar.fwd_return.insert(1, -0.001);
        assert_eq!(label(&bar, &cfg).unwrap(), Label::Down);
        bar.fwd_return.insert(1, 0.002);
        let at_threshold = LabelConfig { horizon_m: 1, epsilon: 0.002 };
        assert_eq!(label(&bar, &at_threshold).unwrap(), Label::Up);
        let missing = LabelConfig { horizon_m: 9, epsilon: 0.0 };
        assert!(matches!(label(&bar, &missing).unwrap_err(), BarsError::MissingReturn { .. }));
    }

    #[test]
    fn class_balance_counts_up_fraction() {
        assert_eq!(class_balance(&[Label::Up, Label::Up]).unwrap(), 1.0);
        assert_eq!(class_balance(&[Label::Up, Label::Down]).unwrap(), 0.5);
        assert!(matches!(class_balance(&[]).unwrap_err(), BarsError::EmptyInput));
    }

    #[test]
    fn columnar_and_csv_round_trips() {
        let trades = [
            trade(1, 5, 100.0, 1.5, false),
            trade(2, 25, 101.0, 0.5, true),
            trade(3, 38, 99.0, 2.0, false),
        ];
        let bars =
            resample_with_returns(&trades, &BarConfig { interval_ms: 10, horizons: vec![1, 2] })
                .unwrap();
        let set = bars_to_columns(&bars);
        let mut buf = Vec::new();
        set.write(&mut buf).unwrap();
        let back = bars_from_columns(&ColumnSet::read(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, bars);

        let mut csv_buf = Vec::new();
        write_bars_csv(&mut csv_buf, &bars).unwrap();
        let from_csv = read_bars_csv(csv_buf.as_slice()).unwrap();
        assert_eq!(from_csv, bars);
    }

    fn trade_stream_strategy() -> impl Strategy<Value = Vec<Trade>> {
        // Gaps up to 3 intervals wide at interval_ms = 100.
        prop::collection::vec((1i64..300, 1.0f64..1000.0, 0.001f64..10.0, any::<bool>()), 1..120)
            .prop_map(|steps| {
                let mut ts = 1i64;
                steps
                    .into_iter()
                    .enumerate()
                    .map(|(i, (dt, price, amount, maker))| {
                        ts += dt;
                        trade(i as u64 + 1, ts, price, amount, maker)
                    })
                    .collect()
            })
    }

    /// Brute-force per-group re-scan of the raw trades, with naive summation.
    fn oracle_bar(trades: &[Trade], group: i64, interval_ms: i64) -> Option<IntervalBar> {
        let subset: Vec<&Trade> =
            trades.iter().filter(|t| group_index(t.timestamp, interval_ms) == group).collect();
        if subset.is_empty() {
            return None;
        }
        let volume: f64 = subset.iter().map(|t| t.amount).sum();
        let active: f64 =
            subset.iter().filter(|t| !t.is_buyer_maker).map(|t| t.amount).sum();
        let pa: f64 = subset.iter().map(|t| t.price * t.amount).sum();
        let min = subset.iter().map(|t| t.price).fold(f64::INFINITY, f64::min);
        let max = subset.iter().map(|t| t.price).fold(f64::NEG_INFINITY, f64::max);
        Some(IntervalBar {
            group_index: group,
            n_trades: subset.len() as u32,
            volume,
            active_buy_volume: active,
            amplitude: max - min,
            price_change: subset.last().unwrap().price - subset[0].price,
            vwap: pa / volume,
            last_price: subset.last().unwrap().price,
            taker_ratio: active / volume,
            is_empty: false,
            fwd_return: BTreeMap::new(),
        })
    }

    fn assert_close(a: f64, b: f64, rel: f64) {
        let scale = a.abs().max(b.abs()).max(1e-300);
        assert!((a - b).abs() <= rel * scale, "{a} vs {b}");
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(trades in trade_stream_strategy()) {
            let cfg = BarConfig { interval_ms: 100, horizons: vec![1] };
            let bars = resample(&trades, &cfg).unwrap();
            for b in &bars {
                match oracle_bar(&trades, b.group_index, cfg.interval_ms) {
                    None => prop_assert!(b.is_empty),
                    Some(o) => {
                        prop_assert_eq!(b.n_trades, o.n_trades);
                        assert_close(b.volume, o.volume, 1e-12);
                        assert_close(b.active_buy_volume, o.active_buy_volume, 1e-12);
                        prop_assert_eq!(b.amplitude, o.amplitude);
                        prop_assert_eq!(b.price_change, o.price_change);
                        prop_assert_eq!(b.last_price, o.last_price);
                        assert_close(b.vwap, o.vwap, 1e-12);
                        assert_close(b.taker_ratio, o.taker_ratio, 1e-12);
                    }
                }
            }
        }

        #[test]
        fn conservation_and_bar_invariants(trades in trade_stream_strategy()) {
            let cfg = BarConfig { interval_ms: 100, horizons: vec![1] };
            let bars = resample(&trades, &cfg).unwrap();

            let mut total = Kahan::default();
            for t in &trades { total.add(t.amount); }
            let bar_volume: f64 = bars.iter().map(|b| b.volume).sum();
            assert_close(bar_volume, total.total(), 1e-9);

            let n: u32 = bars.iter().map(|b| b.n_trades).sum();
            prop_assert_eq!(n as usize, trades.len());

            let mut expected = group_index(trades[0].timestamp, cfg.interval_ms);
            for b in &bars {
                prop_assert_eq!(b.group_index, expected);
                expected += 1;
                prop_assert!(b.active_buy_volume >= 0.0);
                prop_assert!(b.active_buy_volume <= b.volume * (1.0 + 1e-12));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&b.taker_ratio));
                prop_assert!(b.amplitude >= b.price_change.abs() - 1e-12);
                assert_close(b.taker_ratio * b.volume.max(1e-300), b.active_buy_volume.max(0.0), 1e-12);
                if !b.is_empty {
                    let subset: Vec<f64> = trades
                        .iter()
                        .filter(|t| group_index(t.timestamp, cfg.interval_ms) == b.group_index)
                        .map(|t| t.price)
                        .collect();
                    let min = subset.iter().cloned().fold(f64::INFINITY, f64::min);
                    let max = subset.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(b.vwap >= min - 1e-9 && b.vwap <= max + 1e-9);
                }
            }
            prop_assert_eq!(
                bars.last().unwrap().group_index,
                group_index(trades.last().unwrap().timestamp, cfg.interval_ms)
            );
        }

        /// Splitting the stream on an interval edge and concatenating the two
        /// resample outputs reproduces the single-pass output, empty-bar
        /// carry aside (the right chunk re-derives its carry locally).
        #[test]
        fn chunked_resample_matches_whole(trades in trade_stream_strategy(), cut in 0usize..120) {
            let cfg = BarConfig { interval_ms: 100, horizons: vec![1] };
            let whole = resample(&trades, &cfg).unwrap();

            let cut = cut.min(trades.len());
            let boundary_group = match trades.get(cut) {
                Some(t) => group_index(t.timestamp, cfg.interval_ms),
                None => return Ok(()),
            };
            // Move the cut to the first trade of its group so the boundary
            // lies on an interval edge.
            let cut = trades
                .iter()
                .position(|t| group_index(t.timestamp, cfg.interval_ms) == boundary_group)
                .unwrap();
            if cut == 0 { return Ok(()); }

            let left = resample(&trades[..cut], &cfg).unwrap();
            let right = resample(&trades[cut..], &cfg).unwrap();

            // The whole-stream run may contain empty bars between the chunks.
            let left_end = left.last().unwrap().group_index;
            let right_start = right[0].group_index;
            let mut glued: Vec<IntervalBar> = left;
            for gap in left_end + 1..right_start {
                let carry = glued.last().unwrap().clone();
                glued.push(empty_bar(gap, carry.vwap, carry.last_price));
            }
            glued.extend(right);
            prop_assert_eq!(glued.len(), whole.len());
            for (g, w) in glued.iter().zip(&whole) {
                prop_assert_eq!(g.group_index, w.group_index);
                prop_assert_eq!(g.n_trades, w.n_trades);
                prop_assert_eq!(g.volume.to_bits(), w.volume.to_bits());
                prop_assert_eq!(g.vwap.to_bits(), w.vwap.to_bits());
            }
        }

        /// Raising the threshold never increases the count of up labels.
        #[test]
        fn relabeling_is_monotone(trades in trade_stream_strategy(), eps1 in -0.05f64..0.05, eps2 in -0.05f64..0.05) {
            let cfg = BarConfig { interval_ms: 100, horizons: vec![1] };
            let bars = resample_with_returns(&trades, &cfg).unwrap();
            let labeled: Vec<&IntervalBar> =
                bars.iter().filter(|b| b.fwd_return.contains_key(&1)).collect();
            if labeled.is_empty() { return Ok(()); }
            let (lo, hi) = if eps1 <= eps2 { (eps1, eps2) } else { (eps2, eps1) };
            let count = |eps: f64| {
                labeled
                    .iter()
                    .filter(|b| label(b, &LabelConfig { horizon_m: 1, epsilon: eps }).unwrap().is_up())
                    .count()
            };
            prop_assert!(count(hi) <= count(lo));
        }
    }
}
