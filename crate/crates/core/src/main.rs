use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use submatch::cli::{self, CliError, EvalOptions};

#[derive(Parser)]
#[command(name = "submatch", version, about = "Learned subgraph matching on synthetic labelled graphs")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/valid/test JSONL files and a manifest from an experiment config.
    Gen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train on a generated dataset; writes the best checkpoint and the loss history.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Suppress per-validation progress lines on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint: node accuracy, match F1 and inference time.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A JSONL sample file or a dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Split to read when --dataset is a directory (train, valid or test).
        #[arg(long, default_value = "test")]
        split: String,
        /// Count a predicted pair as correct if any exact embedding contains it.
        #[arg(long)]
        oracle_aware: bool,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write per-sample metrics as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print every exact subgraph isomorphism between two graph files as JSON.
    Oracle {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Stop after this many mappings.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Time forward pass plus discretisation on freshly generated samples.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Use these weights instead of a seeded initialisation.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serialising plain data")
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen { config } => {
            let s = cli::cmd_gen(&config)?;
            println!(
                "wrote {} train, {} valid, {} test samples to {}",
                s.counts.train,
                s.counts.valid,
                s.counts.test,
                s.dataset_dir.display()
            );
        }
        Command::Train { config, quiet } => {
            let s = cli::cmd_train(&config, |row| {
                if !quiet {
                    eprintln!(
                        "iteration {} train_loss {:.6} valid_loss {:.6}",
                        row.iteration,
                        row.train_loss,
                        row.valid_loss.unwrap_or(f64::NAN)
                    );
                }
            })?;
            match s.best_validation_loss {
                Some(v) => println!("best validation loss {v:.6} at iteration {}", s.best_iteration),
                None => println!("no validation set; kept final parameters"),
            }
            println!("checkpoint {}", s.checkpoint.display());
            println!("history {}", s.history.display());
            if let Some(r) = s.test_report {
                println!("test accuracy {:.4} f1 {:.4}", r.accuracy, r.f1);
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            oracle_aware,
            report,
            csv,
        } => {
            let opts = EvalOptions {
                split: Some(split),
                oracle_aware,
                report,
                csv,
            };
            let r = cli::cmd_eval(&checkpoint, &dataset, &opts)?;
            println!("samples {}", r.num_samples);
            println!("accuracy {:.6}", r.accuracy);
            println!("f1 {:.6}", r.f1);
            println!("mean inference time {:.3} ms", r.mean_inference_ms);
        }
        Command::Oracle { query, data, limit } => {
            let maps = cli::cmd_oracle(&query, &data, limit)?;
            println!("{}", to_json(&maps));
        }
        Command::Bench {
            config,
            checkpoint,
            samples,
            warmup,
        } => {
            let r = cli::cmd_bench(&config, checkpoint.as_deref(), samples, warmup)?;
            println!("{}", to_json(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
