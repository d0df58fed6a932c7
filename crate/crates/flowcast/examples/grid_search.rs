//! Searches a small window-length x hidden-units grid twice with a shared
//! cell cache: the first pass trains every cell, the second replays them.

use std::time::Instant;

use flowcast::bars::{resample_with_returns, BarConfig};
use flowcast::dataset::FeatureTable;
use flowcast::neural::TrainConfig;
use flowcast::search::{ranked_rows, run_grid, GridSpec};
use flowcast::trade::synth::{synth_trades, Regime, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let horizon = 2u32;
    let stream = synth_trades(&SynthConfig {
        seed: 83,
        intervals: 1200,
        interval_ms: 1000,
        trades_per_interval: 6,
        regime: Regime::PlantedSignal { horizon, strength: 0.01, taker_bias: 0.4 },
        ..SynthConfig::default()
    })?;
    let bars = resample_with_returns(&stream.trades, &BarConfig::new(1000, vec![horizon])?)?;
    let table = FeatureTable::from_bars(&bars, 1000)?;

    let spec = GridSpec {
        interval_ms: 1000,
        horizon_m: horizon,
        epsilon: 0.0,
        t_values: vec![4, 6],
        n_values: vec![3, 5],
        split_p: 3,
        split_q: 30,
        split_seed: 3,
        offset_fraction: 0.34,
        offset_seed: 4,
        train: TrainConfig {
            max_epochs: 8,
            seed: 9,
            batch_schedule: vec![32],
            ..TrainConfig::default()
        },
    };

    let cache = tempfile::tempdir()?;
    let started = Instant::now();
    let result = run_grid(&table, &spec, Some(cache.path()))?;
    let cold = started.elapsed().as_secs_f64();

    println!("{:>3} {:>3} {:>10} {:>9} {:>7} {:>8}", "T", "N", "val_loss", "val_acc", "epochs", "wall_s");
    for cell in ranked_rows(&result) {
        println!(
            "{:>3} {:>3} {:>10.4} {:>9.4} {:>7} {:>8.2}",
            cell.window_t,
            cell.hidden_n,
            cell.best_val_loss.unwrap_or(f64::NAN),
            cell.best_val_acc.unwrap_or(f64::NAN),
            cell.epochs_run,
            cell.wall_time_s
        );
    }
    let (t, n) = result.winner.expect("all cells trained");
    println!("\nwinner: T={t} N={n} (argmin loss, ties to smaller N then T)");

    // Same spec, same cache: every cell is replayed without training.
    let started = Instant::now();
    let replayed = run_grid(&table, &spec, Some(cache.path()))?;
    let warm = started.elapsed().as_secs_f64();
    assert_eq!(replayed.winner, result.winner);
    println!("cold pass {cold:.2}s, cached replay {warm:.3}s");
    Ok(())
}
