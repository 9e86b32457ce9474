//! Batch-loss constructors for the four trainable objectives.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::RngCore;

use crate::diffusion::{
    corrupt_batch, corrupt_pairs, loss_cat_pairwise, loss_cat_pointwise, loss_num, total_loss,
    CatWeighting, CorruptedBatch, CorruptedPairs, DiffusionError, DiffusionSchedule, LossWeights,
};
use crate::model::{BoundParams, DenoiserNet, ModelError, NetConfig};
use crate::numcore::{NumError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("objective does not match the network: {0}")]
    Mismatch(&'static str),
    #[error("unknown objective {0:?}")]
    UnknownKind(String),
}

/// The trainable objective of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    /// Cross-entropy over class logits, or squared error of a scalar score.
    DiscPointwise { squared: bool },
    /// RankNet logistic loss over score differences.
    DiscPairwise,
    /// Denoising loss with Gaussian feature noise and a masked label.
    GenPointwise,
    /// Denoising loss over preference pairs with tied label masking.
    GenPairwise,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::DiscPointwise { squared: false },
        ObjectiveKind::DiscPointwise { squared: true },
        ObjectiveKind::DiscPairwise,
        ObjectiveKind::GenPointwise,
        ObjectiveKind::GenPairwise,
    ];

    pub fn is_generative(self) -> bool {
        matches!(self, ObjectiveKind::GenPointwise | ObjectiveKind::GenPairwise)
    }

    pub fn is_pairwise(self) -> bool {
        matches!(self, ObjectiveKind::DiscPairwise | ObjectiveKind::GenPairwise)
    }

    /// Network shape this objective trains. Pointwise objectives read
    /// binarized labels, so `classes` is 2 for the standard recipes.
    pub fn net_config(self, feature_count: usize, hidden_dim: usize, classes: usize) -> NetConfig {
        match self {
            ObjectiveKind::DiscPointwise { squared: false } => {
                NetConfig::disc_pointwise(feature_count, hidden_dim, classes)
            }
            ObjectiveKind::DiscPointwise { squared: true } | ObjectiveKind::DiscPairwise => {
                NetConfig::disc_score(feature_count, hidden_dim)
            }
            ObjectiveKind::GenPointwise => NetConfig::gen_pointwise(feature_count, hidden_dim, classes),
            ObjectiveKind::GenPairwise => NetConfig::gen_pairwise(feature_count, hidden_dim),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::DiscPointwise { squared: false } => "disc_pointwise",
            ObjectiveKind::DiscPointwise { squared: true } => "disc_pointwise_squared",
            ObjectiveKind::DiscPairwise => "disc_pairwise",
            ObjectiveKind::GenPointwise => "gen_pointwise",
            ObjectiveKind::GenPairwise => "gen_pairwise",
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ObjectiveKind::DiscPointwise { squared: false } => "Discriminative (pointwise)",
            ObjectiveKind::DiscPointwise { squared: true } => "Discriminative (pointwise, squared)",
            ObjectiveKind::DiscPairwise => "Discriminative (pairwise)",
            ObjectiveKind::GenPointwise => "DiffusionRank (pointwise)",
            ObjectiveKind::GenPairwise => "DiffusionRank (pairwise)",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ObjectiveError::UnknownKind(String::from(s)))
    }
}

/// Rows with binarized labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// Preference pairs; the left document is always the preferred one.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub left: Tensor,
    pub right: Tensor,
}

/// Diffusion hyperparameters shared by both generative objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSettings {
    pub schedule: DiffusionSchedule,
    pub weights: LossWeights,
    pub pointwise_weighting: CatWeighting,
    pub pairwise_weighting: CatWeighting,
}

impl GenSettings {
    pub fn new(total_steps: u64) -> Self {
        Self {
            schedule: DiffusionSchedule::default(),
            weights: LossWeights::new(total_steps),
            pointwise_weighting: CatWeighting::Schedule,
            pairwise_weighting: CatWeighting::Schedule,
        }
    }
}

/// Temperature of the pairwise logistic.
pub const RANKNET_TAU: f64 = 1.0;

fn dropout(rng: &mut dyn RngCore, training: bool) -> Option<&mut dyn RngCore> {
    training.then_some(rng)
}

/// Mean softmax cross-entropy of the class logits.
pub fn disc_pointwise_loss(
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    batch: &PointBatch,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Var, ObjectiveError> {
    let logits = net.forward_discriminative(tape, bound, &batch.features, dropout(rng, training))?;
    Ok(tape.softmax_cross_entropy(logits, &batch.labels)?)
}

/// Mean squared error between the scalar score and the binary label.
pub fn disc_pointwise_squared_loss(
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    batch: &PointBatch,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Var, ObjectiveError> {
    let scores = net.forward_discriminative(tape, bound, &batch.features, dropout(rng, training))?;
    if tape.value(scores).cols() != 1 {
        return Err(ObjectiveError::Mismatch("squared loss needs a scalar score head"));
    }
    let y: Vec<f64> = batch.labels.iter().map(|&l| l as f64).collect();
    let y = tape.constant(Tensor::matrix(y.len(), 1, y)?);
    let d = tape.sub(scores, y)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Mean of `log(1 + exp(−(s_i − s_j)/τ))` with both scores from the same net.
pub fn disc_pairwise_loss(
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    batch: &PairBatch,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Var, ObjectiveError> {
    let si = net.forward_discriminative(tape, bound, &batch.left, dropout(rng, training))?;
    let sj = net.forward_discriminative(tape, bound, &batch.right, dropout(rng, training))?;
    if tape.value(si).cols() != 1 {
        return Err(ObjectiveError::Mismatch("pairwise loss needs a scalar score head"));
    }
    let diff = tape.sub(si, sj)?;
    let scaled = tape.scale(diff, -1.0 / RANKNET_TAU);
    let sp = tape.softplus(scaled);
    Ok(tape.mean(sp))
}

/// Corrupts the batch, then scores it with [`gen_pointwise_loss_from`].
#[allow(clippy::too_many_arguments)]
pub fn gen_pointwise_loss(
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    batch: &PointBatch,
    settings: &GenSettings,
    step: u64,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Var, ObjectiveError> {
    let corrupted = corrupt_batch(&batch.features, &batch.labels, &settings.schedule, rng)?;
    gen_pointwise_loss_from(tape, net, bound, &corrupted, settings, step, dropout(rng, training))
}

/// Denoising loss on an already-corrupted pointwise batch:
/// `λ_num·L_num` over every row plus `L_cat` over masked rows.
pub fn gen_pointwise_loss_from(
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    batch: &CorruptedBatch,
    settings: &GenSettings,
    step: u64,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Var, ObjectiveError> {
    let classes = net.config().label_classes;
    let y_in = batch.label_input(classes);
    let out = net.forward_denoiser(tape, bound, &batch.x_t, &y_in, &batch.t, dropout_rng)?;
    if tape.value(out.psi).cols() != classes {
        return Err(ObjectiveError::Mismatch("pointwise denoiser needs a logit head"));
    }
    let l_num = loss_num(tape, out.chi, &batch.eps)?;
    let l_cat = loss_cat_pointwise(
        tape,
        out.psi,
        &batch.targets,
        &batch.t,
        &batch.mask_flags(),
        &settings.schedule,
        settings.pointwise_weighting,
    )?;
    Ok(total_loss(tape, l_num, l_cat, &settings.weights, step)?)
}

/// Corrupts the pairs, then scores them with [`gen_pairwise_loss_from`].
#[allow(clippy::too_many_arguments)]
pub fn gen_pairwise_loss(
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    batch: &PairBatch,
    settings: &GenSettings,
    step: u64,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Var, ObjectiveError> {
    let corrupted = corrupt_pairs(&batch.left, &batch.right, &settings.schedule, rng)?;
    gen_pairwise_loss_from(tape, net, bound, &corrupted, settings, step, dropout(rng, training))
}

/// Denoising loss on corrupted pairs. The pointwise denoiser runs on each
/// side; `L_num` sums both sides' noise errors and `L_cat` treats the two
/// scores as 2-class logits.
pub fn gen_pairwise_loss_from(
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    pairs: &CorruptedPairs,
    settings: &GenSettings,
    step: u64,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<Var, ObjectiveError> {
    let (y_left, y_right) = pairs.label_inputs();
    let left = net.forward_denoiser(
        tape,
        bound,
        &pairs.left_x_t,
        &y_left,
        &pairs.t,
        dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
    )?;
    let right = net.forward_denoiser(tape, bound, &pairs.right_x_t, &y_right, &pairs.t, dropout_rng)?;
    if tape.value(left.psi).cols() != 1 {
        return Err(ObjectiveError::Mismatch("pairwise denoiser needs a scalar score head"));
    }
    let num_left = loss_num(tape, left.chi, &pairs.left_eps)?;
    let num_right = loss_num(tape, right.chi, &pairs.right_eps)?;
    let l_num = tape.add(num_left, num_right)?;
    let l_cat = loss_cat_pairwise(
        tape,
        left.psi,
        right.psi,
        &pairs.t,
        &pairs.masked,
        &settings.schedule,
        settings.pairwise_weighting,
    )?;
    Ok(total_loss(tape, l_num, l_cat, &settings.weights, step)?)
}

/// A training batch of either granularity.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Points(PointBatch),
    Pairs(PairBatch),
}

/// Dispatches to the loss constructor for `kind`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    kind: ObjectiveKind,
    tape: &mut Tape,
    net: &DenoiserNet,
    bound: &BoundParams,
    batch: &Batch,
    settings: &GenSettings,
    step: u64,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Var, ObjectiveError> {
    match (kind, batch) {
        (ObjectiveKind::DiscPointwise { squared: false }, Batch::Points(b)) => {
            disc_pointwise_loss(tape, net, bound, b, rng, training)
        }
        (ObjectiveKind::DiscPointwise { squared: true }, Batch::Points(b)) => {
            disc_pointwise_squared_loss(tape, net, bound, b, rng, training)
        }
        (ObjectiveKind::DiscPairwise, Batch::Pairs(b)) => {
            disc_pairwise_loss(tape, net, bound, b, rng, training)
        }
        (ObjectiveKind::GenPointwise, Batch::Points(b)) => {
            gen_pointwise_loss(tape, net, bound, b, settings, step, rng, training)
        }
        (ObjectiveKind::GenPairwise, Batch::Pairs(b)) => {
            gen_pairwise_loss(tape, net, bound, b, settings, step, rng, training)
        }
        _ => Err(ObjectiveError::Mismatch("batch granularity does not match the objective")),
    }
}
