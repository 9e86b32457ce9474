//! Epoch loop with periodic validation and best-checkpoint selection.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{make_pairs, perturb_features, DataError, Dataset};
use crate::diffusion::{CatWeighting, DiffusionSchedule, LossWeights};
use crate::metrics::{map_at_k, mean, ndcg_at_k, QueryRanking};
use crate::model::{init_parameters, DenoiserNet, ModelError, NetConfig};
use crate::numcore::{Tape, Tensor};
use crate::objectives::{batch_loss, Batch, GenSettings, ObjectiveError, ObjectiveKind, PairBatch, PointBatch};
use crate::optim::{adamw_step, AdamWConfig, OptimError, OptimState};

/// Cutoff used for model selection.
pub const SELECTION_CUTOFF: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("invalid training settings: {0}")]
    Settings(String),
    #[error("training split yields no batches")]
    NoBatches,
}

/// Everything the loop needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub pair_batch_size: usize,
    pub max_pairs_per_query: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub dropout_rate: f64,
    pub time_embed_dim: usize,
    pub optimizer: AdamWConfig,
    pub schedule: DiffusionSchedule,
    pub lambda_num_start: f64,
    pub lambda_num_end: f64,
    pub pointwise_weighting: CatWeighting,
    pub pairwise_weighting: CatWeighting,
    /// Steps between validations; 0 means once per epoch.
    pub eval_interval: u64,
    /// Std of Gaussian noise added to training features; 0 disables it.
    pub perturb_std: f64,
}

impl TrainSettings {
    pub fn new(objective: ObjectiveKind, seed: u64) -> Self {
        Self {
            objective,
            seed,
            epochs: 200,
            batch_size: 1024,
            pair_batch_size: 512,
            max_pairs_per_query: 200,
            hidden_dim: 256,
            num_hidden_layers: crate::model::DEFAULT_HIDDEN_LAYERS,
            dropout_rate: crate::model::DEFAULT_DROPOUT,
            time_embed_dim: crate::model::DEFAULT_TIME_EMBED_DIM,
            optimizer: AdamWConfig::default(),
            schedule: DiffusionSchedule::default(),
            lambda_num_start: 1.0,
            lambda_num_end: 0.1,
            pointwise_weighting: CatWeighting::Schedule,
            pairwise_weighting: CatWeighting::Schedule,
            eval_interval: 0,
            perturb_std: 0.0,
        }
    }

    pub fn net_config(&self, feature_count: usize) -> NetConfig {
        let mut c = self.objective.net_config(feature_count, self.hidden_dim, 2);
        c.num_hidden_layers = self.num_hidden_layers;
        c.dropout_rate = self.dropout_rate;
        c.time_embed_dim = self.time_embed_dim;
        c
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Settings(String::from(m)));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 || self.pair_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.objective.is_pairwise() && self.max_pairs_per_query == 0 {
            return bad("max_pairs_per_query must be positive");
        }
        if !(self.perturb_std >= 0.0 && self.perturb_std.is_finite()) {
            return bad("perturb_std must be finite and non-negative");
        }
        if self.perturb_std > 0.0 && self.objective.is_generative() {
            return bad("feature perturbation applies to discriminative objectives only");
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad("optimizer hyperparameters out of range");
        }
        self.schedule
            .validate()
            .map_err(|e| TrainError::Objective(e.into()))?;
        Ok(())
    }
}

/// One validation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    /// Mean batch loss since the previous record.
    pub train_loss: f64,
    pub val_ndcg10: f64,
}

/// Why a run stopped before its budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abort {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: DenoiserNet,
    pub best_step: u64,
    pub best_val_ndcg10: f64,
    pub log: Vec<LogRecord>,
    pub total_steps: u64,
    pub steps_run: u64,
    pub abort: Option<Abort>,
}

/// Per-query metrics of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub query_ids: Vec<String>,
    pub ndcg: Vec<f64>,
    pub map: Vec<f64>,
}

impl Evaluation {
    pub fn mean_ndcg(&self) -> f64 {
        mean(&self.ndcg)
    }

    pub fn mean_map(&self) -> f64 {
        mean(&self.map)
    }

    pub fn len(&self) -> usize {
        self.query_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_ids.is_empty()
    }
}

/// Scores every document of every query in inference mode.
pub fn rank_dataset(net: &DenoiserNet, data: &Dataset) -> Result<Vec<QueryRanking>, ModelError> {
    if net.config().feature_count != data.feature_count() {
        return Err(ModelError::FeatureCount {
            expected: net.config().feature_count,
            actual: data.feature_count(),
        });
    }
    data.queries()
        .iter()
        .map(|q| {
            let f = data.feature_count();
            let values: Vec<f64> = q.rows.iter().flat_map(|r| r.features.iter().copied()).collect();
            let x = Tensor::matrix(q.rows.len(), f, values)?;
            let scores = net.score(&x)?;
            Ok(QueryRanking::new(q.query_id.clone(), scores, q.grades().collect()))
        })
        .collect()
}

/// NDCG@k and MAP@k for every query, using the original graded labels.
pub fn evaluate(net: &DenoiserNet, data: &Dataset, k: usize) -> Result<Evaluation, ModelError> {
    let rankings = rank_dataset(net, data)?;
    Ok(Evaluation {
        query_ids: rankings.iter().map(|r| r.query_id.clone()).collect(),
        ndcg: rankings.iter().map(|r| ndcg_at_k(r, k)).collect(),
        map: rankings.iter().map(|r| map_at_k(r, k)).collect(),
    })
}

const INIT_STREAM: u64 = 0x1000;
const STEP_STREAM: u64 = 0x2000;

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64))
}

enum Pool {
    Points(Vec<(Vec<f64>, usize)>),
    Pairs(Vec<(Vec<f64>, Vec<f64>)>),
}

impl Pool {
    fn len(&self) -> usize {
        match self {
            Pool::Points(p) => p.len(),
            Pool::Pairs(p) => p.len(),
        }
    }
}

fn epoch_pool(settings: &TrainSettings, train: &Dataset, rng: &mut ChaCha8Rng) -> Pool {
    if settings.objective.is_pairwise() {
        let mut pairs = Vec::new();
        for q in train.queries() {
            for p in make_pairs(q, settings.max_pairs_per_query, rng) {
                pairs.push((p.features_i, p.features_j));
            }
        }
        pairs.shuffle(rng);
        Pool::Pairs(pairs)
    } else {
        let mut rows: Vec<(Vec<f64>, usize)> = train
            .rows()
            .map(|r| (r.features.clone(), usize::from(r.binary)))
            .collect();
        rows.shuffle(rng);
        Pool::Points(rows)
    }
}

fn stack(rows: &[&[f64]], cols: usize) -> Result<Tensor, ModelError> {
    let values: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::matrix(rows.len(), cols, values)?)
}

fn perturb(rows: &mut [Vec<f64>], std: f64, rng: &mut dyn RngCore) -> Result<(), DataError> {
    if std > 0.0 {
        for r in rows.iter_mut() {
            *r = perturb_features(r, std, rng)?;
        }
    }
    Ok(())
}

fn make_batch(
    pool: &Pool,
    range: core::ops::Range<usize>,
    cols: usize,
    perturb_std: f64,
    rng: &mut dyn RngCore,
) -> Result<Batch, TrainError> {
    Ok(match pool {
        Pool::Points(p) => {
            let mut feats: Vec<Vec<f64>> = p[range.clone()].iter().map(|(f, _)| f.clone()).collect();
            perturb(&mut feats, perturb_std, rng)?;
            let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
            Batch::Points(PointBatch {
                features: stack(&refs, cols)?,
                labels: p[range].iter().map(|(_, l)| *l).collect(),
            })
        }
        Pool::Pairs(p) => {
            let mut left: Vec<Vec<f64>> = p[range.clone()].iter().map(|(l, _)| l.clone()).collect();
            let mut right: Vec<Vec<f64>> = p[range].iter().map(|(_, r)| r.clone()).collect();
            perturb(&mut left, perturb_std, rng)?;
            perturb(&mut right, perturb_std, rng)?;
            let l: Vec<&[f64]> = left.iter().map(Vec::as_slice).collect();
            let r: Vec<&[f64]> = right.iter().map(Vec::as_slice).collect();
            Batch::Pairs(PairBatch {
                left: stack(&l, cols)?,
                right: stack(&r, cols)?,
            })
        }
    })
}

fn batches_per_epoch(settings: &TrainSettings, train: &Dataset) -> Result<u64, TrainError> {
    let (n, size) = if settings.objective.is_pairwise() {
        let mut rng = epoch_rng(settings.seed, 0);
        (epoch_pool(settings, train, &mut rng).len(), settings.pair_batch_size)
    } else {
        (train.row_count(), settings.batch_size)
    };
    if n == 0 {
        return Err(TrainError::NoBatches);
    }
    Ok(n.div_ceil(size) as u64)
}

/// Trains from a seeded initialization. `on_record` sees every validation
/// point as it is produced.
pub fn train(
    settings: &TrainSettings,
    train: &Dataset,
    validation: &Dataset,
    on_record: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    settings.validate()?;
    let config = settings.net_config(train.feature_count());
    let mut net = init_parameters(&config, settings.seed ^ INIT_STREAM)?;
    let per_epoch = batches_per_epoch(settings, train)?;
    let total_steps = per_epoch * settings.epochs as u64;
    let interval = if settings.eval_interval == 0 {
        per_epoch
    } else {
        settings.eval_interval
    };
    let mut gen = GenSettings::new(total_steps);
    gen.schedule = settings.schedule;
    gen.weights = LossWeights {
        lambda_num_start: settings.lambda_num_start,
        lambda_num_end: settings.lambda_num_end,
        total_steps,
    };
    gen.pointwise_weighting = settings.pointwise_weighting;
    gen.pairwise_weighting = settings.pairwise_weighting;

    let mut state = OptimState::new(net.params(), settings.optimizer);
    let mut step_rng = ChaCha8Rng::seed_from_u64(settings.seed ^ STEP_STREAM);
    let mut outcome = TrainOutcome {
        best: net.clone(),
        best_step: 0,
        best_val_ndcg10: f64::NEG_INFINITY,
        log: Vec::new(),
        total_steps,
        steps_run: 0,
        abort: None,
    };
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut step = 0u64;
    let size = if settings.objective.is_pairwise() {
        settings.pair_batch_size
    } else {
        settings.batch_size
    };

    for epoch in 0..settings.epochs {
        let mut rng = epoch_rng(settings.seed, epoch);
        let pool = epoch_pool(settings, train, &mut rng);
        let mut start = 0;
        while start < pool.len() {
            let end = (start + size).min(pool.len());
            let batch = make_batch(&pool, start..end, train.feature_count(), settings.perturb_std, &mut step_rng)?;
            start = end;

            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let loss = batch_loss(
                settings.objective,
                &mut tape,
                &net,
                &bound,
                &batch,
                &gen,
                step,
                &mut step_rng,
                true,
            )?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                outcome.abort = Some(Abort { step, loss: value });
                return Ok(outcome);
            }
            let grads = tape.backward(loss).map_err(|e| TrainError::Objective(e.into()))?;
            if let Err(OptimError::NonFiniteGradient { .. }) = adamw_step(net.params_mut(), &grads, &mut state) {
                outcome.abort = Some(Abort { step, loss: value });
                return Ok(outcome);
            }
            step += 1;
            outcome.steps_run = step;
            loss_sum += value;
            loss_count += 1;

            if step.is_multiple_of(interval) || step == total_steps {
                let val = evaluate(&net, validation, SELECTION_CUTOFF)?.mean_ndcg();
                let record = LogRecord {
                    step,
                    train_loss: loss_sum / loss_count as f64,
                    val_ndcg10: val,
                };
                loss_sum = 0.0;
                loss_count = 0;
                on_record(&record);
                outcome.log.push(record);
                if val > outcome.best_val_ndcg10 {
                    outcome.best_val_ndcg10 = val;
                    outcome.best_step = step;
                    outcome.best = net.clone();
                }
            }
        }
    }
    Ok(outcome)
}
