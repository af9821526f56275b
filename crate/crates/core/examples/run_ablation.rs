//! Run a scenario config (default: a shortened copy of
//! `examples/configs/ablation.json`) and print the summary table.
//!
//! cargo run --release --example run_ablation -- [config.json] [out_dir]

use std::path::PathBuf;

use pgad::harness::{render_report, run_scenario, ScenarioConfig};

fn main() -> pgad::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/ablation.json"));
    let mut cfg = ScenarioConfig::from_json_file(&config)?;
    cfg.output_dir = PathBuf::from(args.next().unwrap_or_else(|| "pgad-ablation".into()));
    if std::env::args().len() <= 1 {
        // Quick demo: fewer epochs and only the 50% rate.
        cfg.train.epochs = 10;
        cfg.missing_rates = vec![0.5];
        for arm in &mut cfg.arms {
            arm.missing_rates = None;
        }
    }
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("{} runs on {jobs} workers", cfg.run_count());
    let summary = run_scenario(&cfg, jobs)?;
    println!("{}", render_report(&summary));
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}
