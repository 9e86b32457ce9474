//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use diffrank_core::data::OutputDistribution;
use diffrank_core::train::LogRecord;

use crate::config::RunConfig;
use crate::letor::DatasetFamily;
use crate::pipeline::{self, PrepareOptions, RunArtifacts, Split};
use crate::{report, write_file, Error};

pub const EVAL_SNAPSHOT: &str = "evaluate.resolved";

#[derive(Debug, Parser)]
#[command(name = "diffrank", version, about = "Discriminative and diffusion-based learning to rank")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Suppress per-validation progress lines.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Letor,
    Mslr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputArg {
    Normal,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Vali,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a fold directory, fit the quantile transform on train and cache all splits.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        dataset: FamilyArg,
        #[arg(long)]
        out: PathBuf,
        /// Dataset label for result tables (default: derived from --input).
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = pipeline::DEFAULT_QUANTILES)]
        quantiles: usize,
        #[arg(long, value_enum, default_value = "normal")]
        output: OutputArg,
    },
    /// Train one model from a run-config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Also score the test split and write results into the run directory.
        #[arg(long)]
        test: bool,
    },
    /// Score a split with a checkpoint and write results.csv and per_query.csv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Output directory (default: the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a prepared directory whose training split keeps a fraction of the queries.
    Subsample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a discriminative model on Gaussian-perturbed training features.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        noise_std: f64,
        #[arg(long)]
        test: bool,
    },
    /// Aggregate evaluated runs into tables, significance files and curves.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Output directory (default: <runs>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn progress(quiet: bool) -> impl FnMut(&LogRecord) {
    move |r: &LogRecord| {
        if !quiet {
            eprintln!(
                "step {:>7}  train_loss {:.6}  val_ndcg@10 {:.4}",
                r.step, r.train_loss, r.val_ndcg10
            );
        }
    }
}

fn finish_training(artifacts: &RunArtifacts, data: &Path, test: bool) -> Result<String, Error> {
    let mut msg = format!(
        "best validation NDCG@10 {:.4} at step {} -> {}",
        artifacts.outcome.best_val_ndcg10,
        artifacts.outcome.best_step,
        artifacts.dir.join(pipeline::BEST_CHECKPOINT).display()
    );
    if test {
        let r = evaluate(&artifacts.dir.join(pipeline::BEST_CHECKPOINT), data, Split::Test, &artifacts.dir)?;
        msg.push('\n');
        msg.push_str(&r);
    }
    Ok(msg)
}

fn evaluate(checkpoint: &Path, data: &Path, split: Split, out: &Path) -> Result<String, Error> {
    let r = pipeline::evaluate_run(checkpoint, data, split, out)?;
    let snapshot = format!(
        "# resolved evaluate options\ncheckpoint = {}\ndata = {}\nsplit = {split:?}\nk = 10\n",
        std::path::absolute(checkpoint).unwrap_or_else(|_| checkpoint.to_path_buf()).display(),
        std::path::absolute(data).unwrap_or_else(|_| data.to_path_buf()).display(),
    );
    write_file(&out.join(EVAL_SNAPSHOT), snapshot.as_bytes())?;
    Ok(format!(
        "{} on {} (K = {}): NDCG@10 {:.4}  MAP@10 {:.4}  over {} queries",
        r.method,
        r.dataset,
        r.k_fraction,
        r.evaluation.mean_ndcg(),
        r.evaluation.mean_map(),
        r.evaluation.len()
    ))
}

/// Executes a parsed command, returning the text to print on success.
pub fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Prepare {
            input,
            dataset,
            out,
            name,
            quantiles,
            output,
        } => {
            let opts = PrepareOptions {
                input,
                family: match dataset {
                    FamilyArg::Letor => DatasetFamily::Letor,
                    FamilyArg::Mslr => DatasetFamily::Mslr,
                },
                out,
                name,
                quantile_count: quantiles,
                output: match output {
                    OutputArg::Normal => OutputDistribution::Normal,
                    OutputArg::Uniform => OutputDistribution::Uniform,
                },
            };
            pipeline::prepare(&opts)?;
            std::fs::read_to_string(opts.out.join(crate::cache::SUMMARY_FILE))
                .map_err(|e| Error::io(opts.out.display(), e))
        }
        Command::Train { config, test } => {
            let c = RunConfig::load(&config)?;
            let a = pipeline::train_run(&c, &mut progress(cli.quiet))?;
            finish_training(&a, &c.data, test)
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Vali => Split::Vali,
                SplitArg::Test => Split::Test,
            };
            let out = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
            });
            evaluate(&checkpoint, &data, split, &out)
        }
        Command::Subsample {
            data,
            fraction,
            seed,
            out,
        } => {
            let p = pipeline::subsample_prepared(&data, fraction, seed, &out)?;
            Ok(format!(
                "kept {} of the training queries ({} rows) -> {}",
                p.fold.train.queries().len(),
                p.fold.train.row_count(),
                out.display()
            ))
        }
        Command::Ablate {
            config,
            noise_std,
            test,
        } => {
            let c = RunConfig::load(&config)?;
            let a = pipeline::ablate_run(&c, noise_std, &mut progress(cli.quiet))?;
            finish_training(&a, &c.data, test)
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| runs.join("report"));
            let s = report::write_report(&runs, &out)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            Ok(format!(
                "{} runs in {} table cells -> {}",
                s.runs,
                s.cells,
                out.join(report::TABLE_MD).display()
            ))
        }
    }
}
