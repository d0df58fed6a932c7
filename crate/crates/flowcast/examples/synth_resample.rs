//! Generates a seeded synthetic trade stream and resamples it into
//! one-second interval bars with forward returns.

use flowcast::bars::{resample_with_returns, BarConfig};
use flowcast::trade::synth::{synth_trades, Regime, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        seed: 7,
        intervals: 600,
        interval_ms: 1000,
        trades_per_interval: 5,
        regime: Regime::RandomWalk { step_sd: 0.002 },
        ..SynthConfig::default()
    };
    let stream = synth_trades(&cfg)?;
    println!(
        "{} trades over {} one-second intervals ({})",
        stream.trades.len(),
        cfg.intervals,
        stream.meta.instrument
    );

    let bars = resample_with_returns(
        &stream.trades,
        &BarConfig::new(1000, vec![1, 5])?,
    )?;
    println!("{} bars; first rows:\n", bars.len());
    println!("{:<12} {:>3} {:>10} {:>12} {:>7} {:>10}", "group", "n", "volume", "vwap", "taker", "fwd_1");
    for bar in bars.iter().take(8) {
        println!(
            "{:<12} {:>3} {:>10.4} {:>12.4} {:>7.3} {:>+10.6}",
            bar.group_index,
            bar.n_trades,
            bar.volume,
            bar.vwap,
            bar.taker_ratio,
            bar.fwd_return.get(&1).copied().unwrap_or(f64::NAN),
        );
    }

    let up = bars
        .iter()
        .filter_map(|b| b.fwd_return.get(&1))
        .filter(|&&r| r >= 0.0)
        .count();
    let defined = bars.iter().filter(|b| b.fwd_return.contains_key(&1)).count();
    println!("\n{up}/{defined} one-bar forward returns are non-negative");
    Ok(())
}
