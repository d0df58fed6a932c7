//! Seeded synthetic trade streams.
//!
//! Two regimes:
//! - [`Regime::RandomWalk`]: a geometric walk in the per-interval price level.
//!   Its aggregated price series is non-stationary in levels and stationary in
//!   first differences, which exercises the stationarity stage.
//! - [`Regime::PlantedSignal`]: every interval k carries a hidden sign s_k.
//!   The amount-weighted mean price of interval k+horizon is the level of
//!   interval k times (1 + strength * s_k), and the share of active buys in
//!   interval k is 0.5 + taker_bias * s_k in expectation. The sign of the
//!   forward return at `horizon` therefore equals s_k exactly, and the flow
//!   features carry enough information to recover it. This is the ground
//!   truth used to demonstrate that the model learns at all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Trade, TradeIoError, TradeStream, TradeStreamMeta};

#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    /// Level multiplies by (1 + step_sd * z), z standard normal, each interval.
    RandomWalk { step_sd: f64 },
    /// See module docs. `strength` is the planted per-horizon return magnitude,
    /// `taker_bias` shifts the active-buy probability by `taker_bias * s_k`.
    PlantedSignal { horizon: u32, strength: f64, taker_bias: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub intervals: u32,
    pub interval_ms: i64,
    /// Mean trade count per interval; actual counts are uniform in
    /// [max(1, mean/2), 3*mean/2] so no interval is ever empty.
    pub trades_per_interval: u32,
    pub base_price: f64,
    pub base_amount: f64,
    /// Epoch milliseconds of the first interval's left edge.
    pub start_ms: i64,
    pub regime: Regime,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            intervals: 1000,
            interval_ms: 60_000,
            trades_per_interval: 40,
            base_price: 100.0,
            base_amount: 0.05,
            // 2020-01-01T00:00:00Z; a multiple of every whole-second interval.
            start_ms: 1_577_836_800_000,
            regime: Regime::RandomWalk { step_sd: 0.002 },
        }
    }
}

impl SynthConfig {
    /// Random-walk stream sized to roughly `approx_trades` trades at the
    /// default interval and per-interval count.
    pub fn random_walk(seed: u64, approx_trades: u32) -> Self {
        let base = Self::default();
        Self {
            seed,
            intervals: (approx_trades / base.trades_per_interval).max(1),
            ..base
        }
    }

    fn validate(&self) -> Result<(), TradeIoError> {
        let bad = |m: String| Err(TradeIoError::InvalidConfig(m));
        if self.interval_ms <= 0 {
            return bad(format!("interval_ms must be positive, got {}", self.interval_ms));
        }
        if self.trades_per_interval == 0 {
            return bad("trades_per_interval must be >= 1".into());
        }
        // Timestamps are strictly increasing, so an interval must have room
        // for the largest possible trade count at millisecond resolution.
        let max_count = i64::from(self.trades_per_interval) + i64::from(self.trades_per_interval) / 2;
        if max_count > self.interval_ms {
            return bad(format!(
                "up to {max_count} trades cannot get distinct milliseconds in a {} ms interval",
                self.interval_ms
            ));
        }
        if !(self.base_price > 0.0) || !(self.base_amount > 0.0) {
            return bad("base_price and base_amount must be positive".into());
        }
        if self.start_ms <= 0 {
            return bad(format!("start_ms must be positive, got {}", self.start_ms));
        }
        match self.regime {
            Regime::RandomWalk { step_sd } => {
                if !(step_sd > 0.0 && step_sd < 0.1) {
                    return bad(format!("step_sd must be in (0, 0.1), got {step_sd}"));
                }
            }
            Regime::PlantedSignal { horizon, strength, taker_bias } => {
                if horizon == 0 {
                    return bad("horizon must be >= 1".into());
                }
                if !(strength > 0.0 && strength < 0.2) {
                    return bad(format!("strength must be in (0, 0.2), got {strength}"));
                }
                if !(0.0..0.5).contains(&taker_bias) {
                    return bad(format!("taker_bias must be in [0, 0.5), got {taker_bias}"));
                }
                if self.start_ms % self.interval_ms != 0 {
                    return bad(format!(
                        "planted regime requires start_ms ({}) aligned to interval_ms ({})",
                        self.start_ms, self.interval_ms
                    ));
                }
            }
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal via Box-Muller from two uniforms.
fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// The hidden per-interval signs of a planted-signal config, regenerated from
/// its seed. Errors for the random-walk regime, which has no planted signs.
pub fn planted_signs(config: &SynthConfig) -> Result<Vec<i8>, TradeIoError> {
    config.validate()?;
    if !matches!(config.regime, Regime::PlantedSignal { .. }) {
        return Err(TradeIoError::InvalidConfig(
            "planted_signs is only defined for the planted-signal regime".into(),
        ));
    }
    let mut rng = rng_for(config.seed, 0);
    Ok((0..config.intervals)
        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
        .collect())
}

/// Per-interval price levels. For the planted regime the levels form `horizon`
/// independent multiplicative chains: level(k) = level(k-horizon) * (1 + strength * s_{k-horizon}).
fn levels(config: &SynthConfig, signs: &[i8]) -> Vec<f64> {
    let n = config.intervals as usize;
    let mut levels = vec![config.base_price; n];
    match config.regime {
        Regime::RandomWalk { step_sd } => {
            let mut rng = rng_for(config.seed, 1);
            for k in 1..n {
                let step = (step_sd * next_normal(&mut rng)).clamp(-0.5, 0.5);
                levels[k] = levels[k - 1] * (1.0 + step);
            }
        }
        Regime::PlantedSignal { horizon, strength, .. } => {
            let m = horizon as usize;
            for k in m..n {
                levels[k] = levels[k - m] * (1.0 + strength * f64::from(signs[k - m]));
            }
        }
    }
    levels
}

/// Generates a deterministic trade stream. Identical configs produce
/// identical streams; ids start at 1 and increase by 1; timestamps are
/// strictly increasing and lie in [start_ms, start_ms + intervals * interval_ms).
pub fn synth_trades(config: &SynthConfig) -> Result<TradeStream, TradeIoError> {
    config.validate()?;

    let signs: Vec<i8> = match config.regime {
        Regime::PlantedSignal { .. } => planted_signs(config)?,
        Regime::RandomWalk { .. } => vec![0; config.intervals as usize],
    };
    let levels = levels(config, &signs);

    // Price jitter inside an interval is bounded well below the planted
    // per-horizon move, so the amount-weighted mean keeps the planted sign.
    let jitter = match config.regime {
        Regime::RandomWalk { step_sd } => step_sd / 10.0,
        Regime::PlantedSignal { strength, .. } => strength / 20.0,
    };

    let mut rng = rng_for(config.seed, 2);
    let mean = config.trades_per_interval;
    let (lo, hi) = ((mean / 2).max(1), mean + mean / 2);

    let mut trades = Vec::with_capacity(config.intervals as usize * mean as usize);
    let mut next_id: u64 = 1;

    for k in 0..config.intervals as usize {
        let count = rng.gen_range(lo..=hi);
        // Distinct offsets keep timestamps strictly increasing; validate()
        // guarantees the interval has room for them.
        let mut offsets = std::collections::BTreeSet::new();
        while offsets.len() < count as usize {
            offsets.insert(rng.gen_range(0..config.interval_ms));
        }

        let p_taker = match config.regime {
            Regime::RandomWalk { .. } => 0.5,
            Regime::PlantedSignal { taker_bias, .. } => 0.5 + taker_bias * f64::from(signs[k]),
        };

        for off in offsets {
            let price = levels[k] * (1.0 + rng.gen_range(-jitter..=jitter));
            let amount = config.base_amount * rng.gen_range(-1.0..=1.0f64).exp();
            trades.push(Trade {
                trade_id: next_id,
                timestamp: config.start_ms + k as i64 * config.interval_ms + off,
                price,
                amount,
                is_buyer_maker: !rng.gen_bool(p_taker),
            });
            next_id += 1;
        }
    }

    let meta = TradeStreamMeta::describe("SYNTH", &trades);
    Ok(TradeStream { trades, meta })
}
