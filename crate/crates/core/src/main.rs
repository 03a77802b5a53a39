use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foodmerge::commands::{self, RunConfig};
use foodmerge::dataset::Split;
use foodmerge::error::Error;
use foodmerge::pipeline::RunMode;

/// Hierarchical food-item classification experiments: iterative merging of
/// visually similar items plus staged transfer training, with flat and
/// type-transfer baselines.
#[derive(Parser)]
#[command(name = "foodmerge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (features, hierarchy, split, modes).
    Gen {
        /// JSON config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Global seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one configuration (or several seeds).
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Global seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Training mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<RunMode>,
        /// Dataset directory (overrides the config's data source).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seed list; each runs into <out>/seed_<s>.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Concurrent runs when --seeds is given.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        /// Checkpoint file (checkpoints/final.json inside a run directory).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory with a split file.
        #[arg(long)]
        data: PathBuf,
        /// Split to score.
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Optional directory for report.json and predictions.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a human-readable summary of a run directory.
    Inspect {
        /// Run directory.
        dir: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    match s {
        "full" => Ok(RunMode::Full),
        "flat" => Ok(RunMode::Flat),
        "htl" => Ok(RunMode::Htl),
        other => Err(format!("unknown mode `{other}` (expected full|flat|htl)")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}` (expected train|val|test)")),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Gen { config, seed, out } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(seed) = seed {
                cfg = cfg.with_global_seed(seed);
            }
            commands::cmd_gen(&cfg, &out)
        }
        Command::Run {
            config,
            seed,
            mode,
            data,
            out,
            seeds,
            jobs,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(dir) = data {
                cfg.data = commands::DataSource::Dir(dir);
            }
            if let Some(seed) = seed {
                cfg = cfg.with_global_seed(seed);
            }
            if let Some(mode) = mode {
                cfg.pipeline.mode = mode;
            }
            match seeds {
                Some(seeds) if !seeds.is_empty() => {
                    let reports = commands::cmd_run_seeds(&cfg, &seeds, jobs, &out)?;
                    for (seed, report) in seeds.iter().zip(&reports) {
                        println!(
                            "seed {seed}: item micro {:.4} / macro {:.4}",
                            report.item_micro_accuracy, report.item_macro_accuracy
                        );
                    }
                    Ok(())
                }
                _ => {
                    let report = commands::cmd_run(&cfg, &out)?;
                    println!(
                        "done: item micro {:.4} / macro {:.4}, type micro {:.4}, energy MAE {:.2} kcal",
                        report.item_micro_accuracy,
                        report.item_macro_accuracy,
                        report.type_micro_accuracy,
                        report.nutrient_mae.energy_kcal
                    );
                    Ok(())
                }
            }
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let report = commands::cmd_eval(&checkpoint, &data, split, out.as_deref())?;
            println!(
                "{} split ({} samples): item micro {:.4} / macro {:.4}",
                report.split, report.num_samples, report.item_micro_accuracy, report.item_macro_accuracy
            );
            Ok(())
        }
        Command::Inspect { dir } => commands::cmd_inspect(&dir),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
