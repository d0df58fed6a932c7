//! Runs every pipeline stage in order from one TOML config, the same path
//! the `flowcast` binary takes, and lists the artifacts each stage left
//! behind. Run it twice: every artifact is byte-identical.

use flowcast::pipeline::{self, config::ExperimentConfig, StageRun};

const CONFIG: &str = r#"
[experiment]
instrument = "DEMO"

[synth]
seed = 7
intervals = 2000
trades_per_interval = 6
regime = "planted"
taker_bias = 0.4

[label]
horizon_m = 2

[split]
p = 3
q = 48
seed = 11

[offsets]
fraction = 0.34
seed = 13

[train]
window_t = 8
hidden_n = 6
max_epochs = 12
seed = 17
batch_schedule = [32]

[grid]
t_values = [6, 8]
n_values = [4]

[backtest]
cost_rate = 0.0003
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let out = std::env::temp_dir().join("flowcast-demo");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out)?;
    println!("writing artifacts under {}\n", out.display());

    let stages: [(&str, fn(&ExperimentConfig, &std::path::Path) -> Result<StageRun, pipeline::PipelineError>); 9] = [
        ("synth", pipeline::run_synth),
        ("resample", pipeline::run_resample),
        ("adf", pipeline::run_adf),
        ("split", pipeline::run_split),
        ("train", pipeline::run_train),
        ("grid", pipeline::run_grid_search),
        ("evaluate", pipeline::run_evaluate),
        ("backtest", pipeline::run_backtest),
        ("report", pipeline::run_report),
    ];
    for (name, stage) in stages {
        let run = stage(&cfg, &out)?;
        let outputs: Vec<&str> = run.manifest.outputs.keys().map(String::as_str).collect();
        println!("{name:<9} -> {}", outputs.join(", "));
        for note in &run.notes {
            println!("  {note}");
        }
    }

    println!("\nsummary: {}", out.join("report/summary.json").display());
    Ok(())
}
