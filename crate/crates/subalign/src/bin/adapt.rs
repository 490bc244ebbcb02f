use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use subalign::pipeline_cli::{load_pair, run_benchmark_suite, run_single, write_synthetic, SyntheticSpec};
use subalign::{AdaptationConfig, Error};

#[derive(Parser)]
#[command(name = "adapt", version, about = "Subspace domain adaptation runs and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt one source/target pair and write report.json
    Run {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// CSV with a `label` header, one label per target sample
        #[arg(long)]
        target_labels: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-iteration ALM trace
        #[arg(long)]
        trace: bool,
    },
    /// Run every task of a manifest and write summary.csv
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Write a synthetic rotated-blob pair in the binary-matrix format
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        rotation: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            source,
            target,
            target_labels,
            config,
            out,
            trace,
        } => {
            let cfg = AdaptationConfig::load(&config)?;
            let pair = load_pair(&source, &target, target_labels.as_deref())?;
            let report = run_single(&pair, &cfg, &out, trace)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            match report.accuracy {
                Some(a) => println!("accuracy {a:.4}"),
                None => println!("predicted {} target samples", report.predictions.len()),
            }
        }
        Command::Bench { manifest, out, trace } => {
            let rows = run_benchmark_suite(&manifest, &out, trace)?;
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("task {} / {} failed: {}", r.task, r.method, r.error.as_deref().unwrap_or_default());
            }
            println!("wrote {}", out.join("summary.csv").display());
        }
        Command::Synth {
            seed,
            rotation,
            out,
            n_per_class,
            classes,
            noise,
        } => {
            let spec = SyntheticSpec {
                seed,
                n_per_class,
                class_count: classes,
                rotation_deg: rotation,
                noise_sd: noise,
            };
            write_synthetic(&spec, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
