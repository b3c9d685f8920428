//! Command-line interface: train, evaluate, count costs, report, self-test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slimnet::error::Error;
use slimnet::experiment::{
    build_scatter, emit_results_table, results_csv, evaluate, run_experiment, ExperimentConfig,
    RunResult,
};
use slimnet::flops::{self, FlopPolicy};
use slimnet::model::{load_checkpoint, ModelSpec};
use slimnet::selftest::{run_selftest, Fault};

const DATA_DIR_ENV: &str = "SLIMNET_DATA_DIR";

#[derive(Parser)]
#[command(name = "slimnet", version, about = "Train, prune, and cost-account small residual networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a config file.
    Train {
        /// Path to the `key = value` run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (falls back to $SLIMNET_DATA_DIR, then data.dir).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Output directory for metrics, checkpoints, and the result file.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (falls back to $SLIMNET_DATA_DIR).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Evaluate on a synthetic dataset of this many samples instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Seed for the synthetic dataset.
        #[arg(long, default_value_t = 0)]
        synthetic_seed: u64,
    },
    /// Print the per-layer multiply-accumulate report for a depth.
    Flops {
        #[arg(long)]
        depth: usize,
        /// Fraction of filters kept per pruned layer.
        #[arg(long, default_value_t = 1.0)]
        keep_ratio: f64,
        /// Channel-count policy for pruned reports.
        #[arg(long, default_value = "calibrated")]
        scope: String,
        /// Also write the report as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Collect run results into a table and a scatter plot.
    Report {
        /// Directory containing per-run `result.json` files.
        #[arg(long)]
        runs: PathBuf,
        /// Output directory for table/CSV/SVG (defaults to the runs directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in correctness checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Ingestion(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn resolve_data_dir(flag: Option<PathBuf>, config_dir: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)).or(config_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, data_dir, out, epochs, resume } => {
            let mut cfg = ExperimentConfig::parse_file(&config)?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.data_dir = resolve_data_dir(data_dir, cfg.data_dir.take());
            let result = run_experiment(&cfg, &out, resume)?;
            println!(
                "{} / ResNet {}: accuracy {:.2}%, {:.2} MegaFLOPs, checkpoint {}",
                cfg.method.display(),
                result.depth,
                result.accuracy,
                result.mega_flops,
                result.checkpoint
            );
            Ok(())
        }
        Command::Eval { checkpoint, data_dir, synthetic, synthetic_seed } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let test = match synthetic {
                Some(n) => slimnet::data::synthetic_dataset(n, slimnet::data::NUM_CLASSES, synthetic_seed)?,
                None => {
                    let dir = resolve_data_dir(data_dir, None).ok_or_else(|| {
                        Error::config(format!(
                            "no dataset: pass --data-dir, set ${DATA_DIR_ENV}, or use --synthetic N"
                        ))
                    })?;
                    let (train, test) = slimnet::data::load_cifar10(&dir)?;
                    let stats = slimnet::data::compute_stats(&train);
                    slimnet::data::normalize(&test, &stats)
                }
            };
            let accuracy = evaluate(&ckpt.model, &test)?;
            println!("accuracy: {accuracy:.2}% over {} samples", test.len());
            Ok(())
        }
        Command::Flops { depth, keep_ratio, scope, csv } => {
            let spec = ModelSpec::new(depth)?;
            let policy =
                if keep_ratio == 1.0 { FlopPolicy::Dense } else { FlopPolicy::parse(&scope)? };
            let report = flops::model_flops(&spec, keep_ratio, policy)?;
            print!("{}", report.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            Ok(())
        }
        Command::Report { runs, out } => {
            let results = read_results(&runs)?;
            let out_dir = out.unwrap_or_else(|| runs.clone());
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
            let (table, warnings) = emit_results_table(&results);
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            if results.is_empty() {
                eprintln!("warning: no results found under {}", runs.display());
            }
            print!("{table}");
            let write = |name: &str, content: &str| -> Result<(), Error> {
                let path = out_dir.join(name);
                std::fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))
            };
            write("results.txt", &table)?;
            write("results.csv", &results_csv(&results))?;
            if !results.is_empty() {
                write("scatter.svg", &build_scatter(&results)?.to_svg())?;
            }
            Ok(())
        }
        Command::Selftest { inject_fault } => {
            let fault = match inject_fault.as_deref() {
                None => None,
                Some(name) => Some(Fault::parse(name).ok_or_else(|| {
                    Error::config(format!("unknown fault `{name}` (expected conv-backward)"))
                })?),
            };
            let outcomes = run_selftest(fault)?;
            let mut all_passed = true;
            for o in &outcomes {
                println!("[{}] {}: {}", if o.passed { "ok" } else { "FAIL" }, o.name, o.detail);
                all_passed &= o.passed;
            }
            if all_passed {
                println!("selftest: all {} checks passed", outcomes.len());
                Ok(())
            } else {
                let failed: Vec<&str> =
                    outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
                Err(Error::Numeric(format!("selftest failed: {}", failed.join(", "))))
            }
        }
    }
}

fn read_results(dir: &Path) -> Result<Vec<RunResult>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.is_dir() {
            let nested = path.join("result.json");
            if nested.exists() {
                paths.push(nested);
            }
        } else if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut results = Vec::new();
    for path in paths {
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let result: RunResult = serde_json::from_str(&text)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        results.push(result);
    }
    Ok(results)
}
