//! Places validation islands inside a bar range, tiles each period with
//! offset trailing windows, and reports the resulting example sets.

use flowcast::bars::{resample_with_returns, BarConfig, LabelConfig};
use flowcast::dataset::{
    build_examples, make_split, plan_offsets, windows_for_offset, FeatureTable, OffsetConfig,
    SplitConfig,
};
use flowcast::trade::synth::{synth_trades, Regime, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let window_t = 8;
    let split = SplitConfig { p: 3, q: 60, window_t, seed: 5 };
    let periods = make_split(500, &split)?;
    println!("500 bars, {} validation periods of {} bars:", split.p, split.q);
    for per in &periods {
        println!("  {:?} [{:>3}, {:>3})  {} bars", per.kind, per.start_index, per.end_index, per.len());
    }

    // One period's tiling: non-overlapping windows at each selected offset.
    let per = &periods[0];
    let plan = plan_offsets(per.len(), window_t, 0.25, 9)?;
    println!(
        "\nfirst period tiled at offsets {:?} (of 0..{window_t}):",
        plan.selected_offsets
    );
    for &offset in &plan.selected_offsets {
        let edges = windows_for_offset(per, window_t, offset, per.end_index);
        println!("  offset {offset}: {} windows, right edges {:?}", edges.len(), edges);
    }

    // The full example build on a real corpus: windows, labels, balance.
    let stream = synth_trades(&SynthConfig {
        seed: 3,
        intervals: 500,
        interval_ms: 1000,
        trades_per_interval: 4,
        regime: Regime::RandomWalk { step_sd: 0.002 },
        ..SynthConfig::default()
    })?;
    let bars = resample_with_returns(&stream.trades, &BarConfig::new(1000, vec![2])?)?;
    let table = FeatureTable::from_bars(&bars, 1000)?;
    let sets = build_examples(
        &table,
        &periods,
        window_t,
        &LabelConfig { horizon_m: 2, epsilon: 0.0 },
        &OffsetConfig { fraction: 0.25, seed: 9 },
    )?;
    println!(
        "\n{} training and {} validation examples, validation up-share {:.3}",
        sets.training.len(),
        sets.validation.len(),
        sets.validation_balance.unwrap_or(f64::NAN)
    );
    let e = &sets.validation[0];
    println!(
        "first validation example: rows [{}, {}), label {:?}",
        e.prediction_index - window_t,
        e.prediction_index,
        e.label
    );
    Ok(())
}
