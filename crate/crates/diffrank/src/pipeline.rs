//! The experiment steps behind each CLI command.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diffrank_core::data::{fit_quantile_transform, subsample, Dataset, OutputDistribution};
use diffrank_core::train::{evaluate, train, Evaluation, LogRecord, TrainOutcome, SELECTION_CUTOFF};

use crate::cache::{
    encode_transform, load_prepared, save_prepared, PreparedData, CACHE_FILE, SUMMARY_FILE, TRANSFORM_FILE,
};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::letor::{load_fold, DatasetFamily, Fold};
use crate::{write_file, Error};

/// File names inside a run directory.
pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const RESULTS: &str = "results.csv";
pub const PER_QUERY: &str = "per_query.csv";

pub const TRAIN_LOG_HEADER: &str = "step,train_loss,val_ndcg10";
pub const RESULTS_HEADER: &str = "method,dataset,K,ndcg10,map10,n_queries";
pub const PER_QUERY_HEADER: &str = "query_id,ndcg10,map10";

pub const DEFAULT_QUANTILES: usize = 1000;

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub input: PathBuf,
    pub family: DatasetFamily,
    pub out: PathBuf,
    /// Label in result tables; defaults to the input directory's name.
    pub name: Option<String>,
    pub quantile_count: usize,
    pub output: OutputDistribution,
}

/// Dataset name derived from a fold directory such as `MQ2008/Fold1`.
pub fn default_dataset_name(input: &Path) -> String {
    let abs = std::path::absolute(input).unwrap_or_else(|_| input.to_path_buf());
    let last = abs.file_name().map(|s| s.to_string_lossy().into_owned());
    match last {
        Some(l) if l.to_ascii_lowercase().starts_with("fold") => abs
            .parent()
            .and_then(Path::file_name)
            .map(|p| format!("{}-{l}", p.to_string_lossy()))
            .unwrap_or(l),
        Some(l) => l,
        None => String::from("dataset"),
    }
}

/// Per-split query and row counts.
pub fn summary_table(name: &str, fold: &Fold) -> String {
    let mut s = format!("# {name}\n\n| | Train | Validation | Test | Total |\n|---|---|---|---|---|\n");
    let q: Vec<usize> = fold.splits().iter().map(|(_, d)| d.queries().len()).collect();
    let r: Vec<usize> = fold.splits().iter().map(|(_, d)| d.row_count()).collect();
    let row = |label: &str, v: &[usize]| {
        format!("| {label} | {} | {} | {} | {} |\n", v[0], v[1], v[2], v.iter().sum::<usize>())
    };
    s.push_str(&row("Queries", &q));
    s.push_str(&row("Data points", &r));
    writeln!(
        s,
        "\nFeatures: {}. Grade levels: {}.",
        fold.train.feature_count(),
        fold.train.grade_levels()
    )
    .expect("string write");
    s
}

/// Parses a fold, fits the quantile transform on train only and writes the
/// transformed cache, the transform and a summary.
pub fn prepare(opts: &PrepareOptions) -> Result<PreparedData, Error> {
    let raw = load_fold(&opts.input, opts.family)?;
    let transform = fit_quantile_transform(&raw.train, opts.quantile_count, opts.output)?;
    let fold = Fold {
        train: transform.apply_dataset(&raw.train),
        vali: transform.apply_dataset(&raw.vali),
        test: transform.apply_dataset(&raw.test),
    };
    let name = opts.name.clone().unwrap_or_else(|| default_dataset_name(&opts.input));
    let prepared = PreparedData {
        name: name.clone(),
        family: opts.family,
        fold,
    };
    save_prepared(&opts.out, &prepared)?;
    write_file(&opts.out.join(TRANSFORM_FILE), &encode_transform(&transform))?;
    write_file(&opts.out.join(SUMMARY_FILE), summary_table(&name, &raw).as_bytes())?;
    let snapshot = format!(
        "# resolved prepare options\ninput = {}\ndataset = {}\nname = {name}\nquantile_count = {}\noutput = {}\n",
        std::path::absolute(&opts.input).unwrap_or_else(|_| opts.input.clone()).display(),
        opts.family.as_str(),
        opts.quantile_count,
        match opts.output {
            OutputDistribution::Uniform => "uniform",
            OutputDistribution::Normal => "normal",
        }
    );
    write_file(&opts.out.join(RESOLVED_CONFIG), snapshot.as_bytes())?;
    Ok(prepared)
}

/// The training split reduced to `fraction` of its queries, seeded by `seed`.
pub fn training_subset(train: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(subsample(train, fraction, &mut rng)?)
}

/// Writes a prepared directory whose training split is a query subsample.
pub fn subsample_prepared(data: &Path, fraction: f64, seed: u64, out: &Path) -> Result<PreparedData, Error> {
    let mut prepared = load_prepared(data)?;
    prepared.fold.train = training_subset(&prepared.fold.train, fraction, seed)?;
    save_prepared(out, &prepared)?;
    if data.is_dir() && data.join(TRANSFORM_FILE).is_file() {
        fs::copy(data.join(TRANSFORM_FILE), out.join(TRANSFORM_FILE))
            .map_err(|e| Error::io(out.join(TRANSFORM_FILE).display(), e))?;
    }
    write_file(
        &out.join(SUMMARY_FILE),
        summary_table(&format!("{} (K = {fraction})", prepared.name), &prepared.fold).as_bytes(),
    )?;
    let snapshot = format!(
        "# resolved subsample options\ndata = {}\nfraction = {fraction}\nseed = {seed}\n",
        std::path::absolute(data).unwrap_or_else(|_| data.to_path_buf()).display()
    );
    write_file(&out.join(RESOLVED_CONFIG), snapshot.as_bytes())?;
    Ok(prepared)
}

pub fn format_train_log(log: &[LogRecord]) -> String {
    let mut s = format!("{TRAIN_LOG_HEADER}\n");
    for r in log {
        writeln!(s, "{},{},{}", r.step, r.train_loss, r.val_ndcg10).expect("string write");
    }
    s
}

/// What a finished training run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub outcome: TrainOutcome,
    pub checkpoint: Checkpoint,
    pub dir: PathBuf,
}

/// Trains per the config and writes the config snapshot, TrainLog and best
/// checkpoint into `config.out`. On divergence the files are still written
/// before the error is returned.
pub fn train_run(config: &RunConfig, progress: &mut dyn FnMut(&LogRecord)) -> Result<RunArtifacts, Error> {
    config.validate()?;
    let prepared = load_prepared(&config.data)?;
    let train_split = if config.k_fraction < 1.0 {
        training_subset(&prepared.fold.train, config.k_fraction, config.settings.seed)?
    } else {
        prepared.fold.train.clone()
    };
    let out = &config.out;
    write_file(&out.join(RESOLVED_CONFIG), config.resolved_text().as_bytes())?;
    let outcome = train(&config.settings, &train_split, &prepared.fold.vali, progress)?;
    let checkpoint = Checkpoint::from_net(
        config.settings.objective,
        &outcome.best,
        outcome.best_step,
        outcome.best_val_ndcg10,
        &prepared.name,
        config.k_fraction,
        config.settings.perturb_std,
    );
    write_file(&out.join(TRAIN_LOG), format_train_log(&outcome.log).as_bytes())?;
    checkpoint.save(&out.join(BEST_CHECKPOINT))?;
    if let Some(abort) = outcome.abort {
        return Err(Error::Diverged {
            step: abort.step,
            loss: abort.loss,
        });
    }
    Ok(RunArtifacts {
        outcome,
        checkpoint,
        dir: out.clone(),
    })
}

/// Trains on features perturbed by `noise_std`; evaluation data is untouched.
pub fn ablate_run(
    config: &RunConfig,
    noise_std: f64,
    progress: &mut dyn FnMut(&LogRecord),
) -> Result<RunArtifacts, Error> {
    if config.settings.objective.is_generative() {
        return Err(Error::Config(format!(
            "the perturbation ablation is defined for discriminative objectives, not {}",
            config.settings.objective
        )));
    }
    let mut c = config.clone();
    c.settings.perturb_std = noise_std;
    train_run(&c, progress)
}

/// One evaluated checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub k_fraction: f64,
    pub evaluation: Evaluation,
}

impl EvalReport {
    pub fn results_csv(&self) -> String {
        format!(
            "{RESULTS_HEADER}\n{},{},{},{},{},{}\n",
            csv_field(&self.method),
            csv_field(&self.dataset),
            self.k_fraction,
            self.evaluation.mean_ndcg(),
            self.evaluation.mean_map(),
            self.evaluation.len()
        )
    }

    pub fn per_query_csv(&self) -> String {
        let e = &self.evaluation;
        let mut s = format!("{PER_QUERY_HEADER}\n");
        for i in 0..e.len() {
            writeln!(s, "{},{},{}", csv_field(&e.query_ids[i]), e.ndcg[i], e.map[i]).expect("string write");
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Which split of a prepared fold to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Vali,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "train" => Ok(Split::Train),
            "vali" | "validation" => Ok(Split::Vali),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train|vali|test)"))),
        }
    }
}

impl Split {
    pub fn pick(self, fold: &Fold) -> &Dataset {
        match self {
            Split::Train => &fold.train,
            Split::Vali => &fold.vali,
            Split::Test => &fold.test,
        }
    }
}

/// Scores a split with a checkpoint at cutoff 10.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, data: &Dataset) -> Result<EvalReport, Error> {
    let net = checkpoint.to_net()?;
    let evaluation = evaluate(&net, data, SELECTION_CUTOFF)?;
    Ok(EvalReport {
        method: checkpoint.method_name(),
        dataset: checkpoint.dataset.clone(),
        k_fraction: checkpoint.k_fraction,
        evaluation,
    })
}

/// Loads a checkpoint and a prepared split, then writes `results.csv` and
/// `per_query.csv` into `out`.
pub fn evaluate_run(checkpoint: &Path, data: &Path, split: Split, out: &Path) -> Result<EvalReport, Error> {
    let ck = Checkpoint::load(checkpoint)?;
    let prepared = load_prepared(data)?;
    let report = evaluate_checkpoint(&ck, split.pick(&prepared.fold))?;
    write_file(&out.join(RESULTS), report.results_csv().as_bytes())?;
    write_file(&out.join(PER_QUERY), report.per_query_csv().as_bytes())?;
    Ok(report)
}

/// Path of the dataset cache for a prepared directory.
pub fn cache_path(dir: &Path) -> PathBuf {
    dir.join(CACHE_FILE)
}
