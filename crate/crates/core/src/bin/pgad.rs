use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use pgad::harness::{compare_from_dir, export_embeddings, load_student_checkpoint, run_scenario, ScenarioConfig};
use pgad::synthdata::read_dataset_csv;
use pgad::{PgadError, Result};

#[derive(Parser)]
#[command(name = "pgad", version, about = "Prototype-guided distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config: every arm, missing rate and fold.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: PathBuf,
        /// Scenario seed (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write student features of a dataset CSV for external projection.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired t-tests of every arm against a baseline from a run directory.
    Compare {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        baseline: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Number of comparisons for the Bonferroni correction
        /// (default: compared arms x 4 metrics).
        #[arg(long)]
        m: Option<usize>,
    },
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed, jobs } => {
            let mut cfg = ScenarioConfig::from_json_file(&config)?;
            cfg.output_dir = out;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if jobs == 0 {
                return Err(PgadError::Usage("--jobs must be >= 1".into()));
            }
            let summary = run_scenario(&cfg, jobs)?;
            println!(
                "ok runs={} cells={} out={}",
                summary.records.len(),
                summary.cells.len(),
                cfg.output_dir.display()
            );
        }
        Command::ExportEmbeddings { checkpoint, data, out } => {
            let student = load_student_checkpoint(&checkpoint)?;
            let (samples, _, _) = read_dataset_csv(&data)?;
            export_embeddings(&student, &samples, &out)?;
            println!("ok rows={} out={}", samples.len(), out.display());
        }
        Command::Compare { summary, baseline, alpha, m } => {
            let results = compare_from_dir(&summary, &baseline, alpha, m)?;
            for r in &results {
                println!(
                    "{},{},{},{},{},{},{}",
                    r.method_a, r.method_b, r.metric, r.t_statistic, r.p_value, r.significant, r.alpha_corrected
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("error kind=usage message={}", one_line(&e.to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(if e.kind() == "usage" { 2 } else { 1 })
        }
    }
}
