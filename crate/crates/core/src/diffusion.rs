//! Continuous-time forward corruption and the joint denoising loss.
//!
//! Features follow a variance-exploding Gaussian process
//! `x_t = x_0 + σ(t)·ε` with `σ(t) = σ_max·t^ρ`. Labels follow an absorbing
//! mask process with survival probability `α_t = 1 − t`, for which the
//! masked cross-entropy weight `−α'_t / (1 − α_t)` reduces to `1/t`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::label_one_hot;
use crate::numcore::{NumError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("time {t} below the minimum {t_min}")]
    BelowMinTime { t: f64, t_min: f64 },
    #[error("time {0} outside [0, 1]")]
    TimeRange(f64),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// Noise and mask schedules plus the lower clamp on sampled times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSchedule {
    pub sigma_max: f64,
    pub rho: f64,
    pub t_min: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self {
            sigma_max: 1.0,
            rho: 1.0,
            // One step of a 50-step discretization.
            t_min: 1.0 / 50.0,
        }
    }
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(DiffusionError::Schedule(format!(
                "t_min must lie in (0, 1), got {}",
                self.t_min
            )));
        }
        if !(self.sigma_max >= 0.0) || !(self.rho > 0.0) {
            return Err(DiffusionError::Schedule(format!(
                "need sigma_max >= 0 and rho > 0, got {} and {}",
                self.sigma_max, self.rho
            )));
        }
        Ok(())
    }

    /// Numeric noise scale `σ_max · t^ρ`.
    pub fn sigma_num(&self, t: f64) -> f64 {
        self.sigma_max * libm::pow(t, self.rho)
    }

    /// Mask survival probability.
    pub fn alpha(&self, t: f64) -> f64 {
        1.0 - t
    }

    pub fn alpha_derivative(&self, _t: f64) -> f64 {
        -1.0
    }

    /// Masked-loss weight `−α'_t / (1 − α_t)`.
    pub fn mask_weight(&self, t: f64) -> Result<f64, DiffusionError> {
        if t < self.t_min {
            return Err(DiffusionError::BelowMinTime { t, t_min: self.t_min });
        }
        Ok(-self.alpha_derivative(t) / (1.0 - self.alpha(t)))
    }
}

/// `λ_num` annealed linearly across the training budget; `λ_cat` is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_num_start: f64,
    pub lambda_num_end: f64,
    pub total_steps: u64,
}

impl LossWeights {
    pub fn new(total_steps: u64) -> Self {
        Self {
            lambda_num_start: 1.0,
            lambda_num_end: 0.1,
            total_steps,
        }
    }

    /// Weight at zero-based `step`; the last step (`total_steps − 1`) and
    /// anything after it use the end value.
    pub fn lambda_num(&self, step: u64) -> f64 {
        if self.total_steps <= 1 {
            return self.lambda_num_start;
        }
        let last = self.total_steps - 1;
        let frac = step.min(last) as f64 / last as f64;
        self.lambda_num_start * (1.0 - frac) + self.lambda_num_end * frac
    }

    pub fn lambda_cat(&self) -> f64 {
        1.0
    }
}

/// How masked rows are weighted in the categorical loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CatWeighting {
    /// `−α'_t / (1 − α_t)` from the mask schedule.
    #[default]
    Schedule,
    /// Every masked row weighs 1.
    Unit,
}

impl CatWeighting {
    fn weight(self, schedule: &DiffusionSchedule, t: f64) -> Result<f64, DiffusionError> {
        match self {
            CatWeighting::Schedule => schedule.mask_weight(t),
            CatWeighting::Unit => Ok(1.0),
        }
    }
}

/// Label state after corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelState {
    Observed(usize),
    Masked,
}

impl LabelState {
    pub fn is_masked(self) -> bool {
        matches!(self, LabelState::Masked)
    }

    /// One-hot over `classes + 1` slots, the last being the mask.
    pub fn one_hot(self, classes: usize) -> Vec<f64> {
        match self {
            LabelState::Observed(c) => label_one_hot(Some(c), classes),
            LabelState::Masked => label_one_hot(None, classes),
        }
    }
}

/// I.i.d. `Uniform[t_min, 1]` times.
pub fn sample_time<R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    t_min: f64,
) -> Result<Vec<f64>, DiffusionError> {
    if !(t_min > 0.0 && t_min < 1.0) {
        return Err(DiffusionError::Schedule(format!("t_min must lie in (0, 1), got {t_min}")));
    }
    Ok((0..batch)
        .map(|_| t_min + (1.0 - t_min) * rng.random::<f64>())
        .collect())
}

fn check_time(t: f64) -> Result<(), DiffusionError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(DiffusionError::TimeRange(t))
    }
}

/// Returns `(x_t, ε)` with `x_t = x_0 + σ(t)·ε`.
pub fn corrupt_numeric<R: Rng + ?Sized>(
    x0: &[f64],
    t: f64,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), DiffusionError> {
    check_time(t)?;
    let sigma = schedule.sigma_num(t);
    let eps: Vec<f64> = x0.iter().map(|_| StandardNormal.sample(rng)).collect();
    let x_t = x0.iter().zip(&eps).map(|(x, e)| x + sigma * e).collect();
    Ok((x_t, eps))
}

/// Masks the label with probability `1 − α_t`.
pub fn corrupt_label<R: Rng + ?Sized>(
    y0: usize,
    t: f64,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<LabelState, DiffusionError> {
    check_time(t)?;
    let mask_prob = 1.0 - schedule.alpha(t);
    Ok(if rng.random::<f64>() < mask_prob {
        LabelState::Masked
    } else {
        LabelState::Observed(y0)
    })
}

/// A pointwise batch after forward corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedBatch {
    pub x_t: Tensor,
    pub eps: Tensor,
    pub labels: Vec<LabelState>,
    pub targets: Vec<usize>,
    pub t: Vec<f64>,
}

impl CorruptedBatch {
    pub fn mask_flags(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_masked()).collect()
    }

    /// Label input matrix (`rows × (classes + 1)`).
    pub fn label_input(&self, classes: usize) -> Tensor {
        one_hot_matrix(&self.labels, classes)
    }
}

pub(crate) fn one_hot_matrix(labels: &[LabelState], classes: usize) -> Tensor {
    let values = labels.iter().flat_map(|l| l.one_hot(classes)).collect();
    Tensor::matrix(labels.len(), classes + 1, values).expect("sized")
}

/// Samples one time per row, then Gaussian noise, then the mask draw.
pub fn corrupt_batch<R: Rng + ?Sized>(
    x0: &Tensor,
    targets: &[usize],
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<CorruptedBatch, DiffusionError> {
    let rows = x0.rows();
    let t = sample_time(rng, rows, schedule.t_min)?;
    let mut x_t = Vec::with_capacity(x0.len());
    let mut eps = Vec::with_capacity(x0.len());
    let mut labels = Vec::with_capacity(rows);
    for (i, &ti) in t.iter().enumerate() {
        let (xt, e) = corrupt_numeric(x0.row(i), ti, schedule, rng)?;
        x_t.extend(xt);
        eps.extend(e);
        labels.push(corrupt_label(targets[i], ti, schedule, rng)?);
    }
    Ok(CorruptedBatch {
        x_t: Tensor::matrix(rows, x0.cols(), x_t)?,
        eps: Tensor::matrix(rows, x0.cols(), eps)?,
        labels,
        targets: targets.to_vec(),
        t,
    })
}

/// A batch of preference pairs after corruption: one shared time and one
/// mask decision per pair, independent noise per side.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedPairs {
    pub left_x_t: Tensor,
    pub left_eps: Tensor,
    pub right_x_t: Tensor,
    pub right_eps: Tensor,
    pub masked: Vec<bool>,
    pub t: Vec<f64>,
}

impl CorruptedPairs {
    /// Label inputs for both sides. Unmasked pairs reveal the preference
    /// (left preferred → class 1, right → class 0).
    pub fn label_inputs(&self) -> (Tensor, Tensor) {
        let side = |class: usize| -> Vec<LabelState> {
            self.masked
                .iter()
                .map(|&m| if m { LabelState::Masked } else { LabelState::Observed(class) })
                .collect()
        };
        (one_hot_matrix(&side(1), 2), one_hot_matrix(&side(0), 2))
    }
}

pub fn corrupt_pairs<R: Rng + ?Sized>(
    left: &Tensor,
    right: &Tensor,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<CorruptedPairs, DiffusionError> {
    if left.shape() != right.shape() {
        return Err(NumError::Dimension {
            op: "corrupt_pairs",
            left: left.shape().to_vec(),
            right: right.shape().to_vec(),
        }
        .into());
    }
    let rows = left.rows();
    let cols = left.cols();
    let t = sample_time(rng, rows, schedule.t_min)?;
    let mut buffers: [Vec<f64>; 4] = core::array::from_fn(|_| Vec::with_capacity(rows * cols));
    let mut masked = Vec::with_capacity(rows);
    for (i, &ti) in t.iter().enumerate() {
        let (lx, le) = corrupt_numeric(left.row(i), ti, schedule, rng)?;
        let (rx, re) = corrupt_numeric(right.row(i), ti, schedule, rng)?;
        buffers[0].extend(lx);
        buffers[1].extend(le);
        buffers[2].extend(rx);
        buffers[3].extend(re);
        masked.push(corrupt_label(1, ti, schedule, rng)?.is_masked());
    }
    let [lx, le, rx, re] = buffers;
    Ok(CorruptedPairs {
        left_x_t: Tensor::matrix(rows, cols, lx)?,
        left_eps: Tensor::matrix(rows, cols, le)?,
        right_x_t: Tensor::matrix(rows, cols, rx)?,
        right_eps: Tensor::matrix(rows, cols, re)?,
        masked,
        t,
    })
}

/// Mean over rows of `‖χ − ε‖²`.
pub fn loss_num(tape: &mut Tape, chi: Var, eps: &Tensor) -> Result<Var, DiffusionError> {
    let rows = eps.rows().max(1) as f64;
    let e = tape.constant(eps.clone());
    let d = tape.sub(chi, e)?;
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / rows))
}

fn masked_weights(
    t: &[f64],
    masked: &[bool],
    schedule: &DiffusionSchedule,
    weighting: CatWeighting,
) -> Result<(Vec<f64>, usize), DiffusionError> {
    let mut count = 0;
    let weights = t
        .iter()
        .zip(masked)
        .map(|(&ti, &m)| {
            if m {
                count += 1;
                weighting.weight(schedule, ti)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((weights, count))
}

/// Mean over masked rows of `w(t) · (−log softmax(ψ)[y_0])`; 0 if no row is
/// masked.
pub fn loss_cat_pointwise(
    tape: &mut Tape,
    psi: Var,
    targets: &[usize],
    t: &[f64],
    masked: &[bool],
    schedule: &DiffusionSchedule,
    weighting: CatWeighting,
) -> Result<Var, DiffusionError> {
    let (weights, count) = masked_weights(t, masked, schedule, weighting)?;
    if count == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    Ok(tape.weighted_softmax_cross_entropy(psi, targets, &weights, count as f64)?)
}

/// Pairwise categorical loss: the two scores form 2-class logits whose
/// target is "left preferred", averaged over masked pairs with `w(t)`.
pub fn loss_cat_pairwise(
    tape: &mut Tape,
    score_i: Var,
    score_j: Var,
    t: &[f64],
    masked: &[bool],
    schedule: &DiffusionSchedule,
    weighting: CatWeighting,
) -> Result<Var, DiffusionError> {
    let (weights, count) = masked_weights(t, masked, schedule, weighting)?;
    if count == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let logits = tape.concat_cols(&[score_i, score_j])?;
    let targets = alloc::vec![0usize; t.len()];
    Ok(tape.weighted_softmax_cross_entropy(logits, &targets, &weights, count as f64)?)
}

/// `λ_num(step)·L_num + λ_cat·L_cat`.
pub fn total_loss(
    tape: &mut Tape,
    l_num: Var,
    l_cat: Var,
    weights: &LossWeights,
    step: u64,
) -> Result<Var, DiffusionError> {
    let num = tape.scale(l_num, weights.lambda_num(step));
    let cat = tape.scale(l_cat, weights.lambda_cat());
    Ok(tape.add(num, cat)?)
}
