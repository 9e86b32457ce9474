//! Feedforward scorer and denoiser sharing one backbone.
//!
//! The backbone is `num_hidden_layers` blocks of linear → SiLU → LayerNorm →
//! dropout. A discriminative network reads features and emits either class
//! logits or a single score. A generative network additionally reads the
//! (possibly masked) label one-hot and a sinusoidal embedding of the
//! diffusion time, and emits a feature-noise prediction χ next to the label
//! head ψ. The two heads are separate matrices so inference can skip χ.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numcore::{softmax_into, NumError, Tape, Tensor, Var, LAYERNORM_EPS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("row {row}: label input is not a one-hot vector over {width} slots")]
    InvalidOneHot { row: usize, width: usize },
    #[error("diffusion time {0} outside [0, 1]")]
    TimeRange(f64),
    #[error("expected {expected} input features, got {actual}")]
    FeatureCount { expected: usize, actual: usize },
    #[error("parameter buffer holds {actual} values, configuration needs {expected}")]
    ParameterCount { expected: usize, actual: usize },
}

/// What the label head emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelHead {
    /// One logit per relevance class.
    Logits,
    /// A single real-valued score.
    Score,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub feature_count: usize,
    pub hidden_dim: usize,
    pub num_hidden_layers: usize,
    pub dropout_rate: f64,
    /// Number of real label classes (the generative label input adds one
    /// more slot for the mask state).
    pub label_classes: usize,
    pub head: LabelHead,
    pub generative: bool,
    pub time_embed_dim: usize,
}

pub const DEFAULT_TIME_EMBED_DIM: usize = 16;
pub const DEFAULT_HIDDEN_LAYERS: usize = 4;
pub const DEFAULT_DROPOUT: f64 = 0.1;

impl NetConfig {
    fn base(feature_count: usize, hidden_dim: usize) -> Self {
        Self {
            feature_count,
            hidden_dim,
            num_hidden_layers: DEFAULT_HIDDEN_LAYERS,
            dropout_rate: DEFAULT_DROPOUT,
            label_classes: 2,
            head: LabelHead::Logits,
            generative: false,
            time_embed_dim: 0,
        }
    }

    /// Features → class logits.
    pub fn disc_pointwise(feature_count: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            label_classes: classes,
            ..Self::base(feature_count, hidden_dim)
        }
    }

    /// Features → scalar score (pairwise RankNet, or squared-loss pointwise).
    pub fn disc_score(feature_count: usize, hidden_dim: usize) -> Self {
        Self {
            head: LabelHead::Score,
            ..Self::base(feature_count, hidden_dim)
        }
    }

    /// `[x_t ‖ label one-hot ‖ time embedding]` → `(χ, class logits)`.
    pub fn gen_pointwise(feature_count: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            label_classes: classes,
            generative: true,
            time_embed_dim: DEFAULT_TIME_EMBED_DIM,
            ..Self::base(feature_count, hidden_dim)
        }
    }

    /// Pairwise denoiser: binary preference label input, `(χ, score)` output.
    pub fn gen_pairwise(feature_count: usize, hidden_dim: usize) -> Self {
        Self {
            head: LabelHead::Score,
            generative: true,
            time_embed_dim: DEFAULT_TIME_EMBED_DIM,
            ..Self::base(feature_count, hidden_dim)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.feature_count == 0 {
            return fail(String::from("feature_count must be positive"));
        }
        if self.hidden_dim == 0 {
            return fail(String::from("hidden_dim must be positive"));
        }
        if self.num_hidden_layers == 0 {
            return fail(String::from("num_hidden_layers must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.label_classes < 2 {
            return fail(format!("label_classes must be at least 2, got {}", self.label_classes));
        }
        if self.generative && (self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2)) {
            return fail(format!(
                "time_embed_dim must be even and at least 2, got {}",
                self.time_embed_dim
            ));
        }
        Ok(())
    }

    /// Width of the label one-hot input, including the mask slot.
    pub fn label_input_width(&self) -> usize {
        if self.generative {
            self.label_classes + 1
        } else {
            0
        }
    }

    pub fn input_dim(&self) -> usize {
        self.feature_count
            + if self.generative {
                self.label_input_width() + self.time_embed_dim
            } else {
                0
            }
    }

    /// Width of ψ. Never includes a mask logit.
    pub fn label_output_width(&self) -> usize {
        match self.head {
            LabelHead::Logits => self.label_classes,
            LabelHead::Score => 1,
        }
    }

    /// Width of χ (zero for discriminative networks).
    pub fn noise_output_width(&self) -> usize {
        if self.generative {
            self.feature_count
        } else {
            0
        }
    }

    /// `(fan_in, fan_out)` of every hidden linear layer.
    pub fn backbone_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_hidden_layers)
            .map(|l| {
                let fan_in = if l == 0 { self.input_dim() } else { self.hidden_dim };
                (fan_in, self.hidden_dim)
            })
            .collect()
    }

    /// Shapes of every parameter tensor in slot order.
    pub fn parameter_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for (fan_in, fan_out) in self.backbone_dims() {
            shapes.push(vec![fan_in, fan_out]);
            shapes.push(vec![fan_out]);
            shapes.push(vec![fan_out]);
            shapes.push(vec![fan_out]);
        }
        shapes.push(vec![self.hidden_dim, self.label_output_width()]);
        shapes.push(vec![self.label_output_width()]);
        if self.generative {
            shapes.push(vec![self.hidden_dim, self.noise_output_width()]);
            shapes.push(vec![self.noise_output_width()]);
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    fn label_head_slot(&self) -> usize {
        4 * self.num_hidden_layers
    }

    fn noise_head_slot(&self) -> Option<usize> {
        self.generative.then(|| 4 * self.num_hidden_layers + 2)
    }
}

/// Fixed sinusoidal encoding of the diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    frequencies: Vec<f64>,
}

impl TimeEmbedding {
    /// `dim / 2` frequencies spaced geometrically from 1 to 1000.
    pub fn new(dim: usize) -> Self {
        let half = dim / 2;
        let frequencies = (0..half)
            .map(|k| {
                if half <= 1 {
                    1.0
                } else {
                    libm::pow(1000.0, k as f64 / (half - 1) as f64)
                }
            })
            .collect();
        Self { frequencies }
    }

    pub fn dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.frequencies.iter().map(|f| libm::sin(f * t)));
        out.extend(self.frequencies.iter().map(|f| libm::cos(f * t)));
        out
    }
}

/// One-hot label input; `None` selects the mask slot.
pub fn label_one_hot(class: Option<usize>, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes + 1];
    v[class.unwrap_or(classes)] = 1.0;
    v
}

/// Parameters recorded on a tape for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Outputs of the generative network.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserOutput {
    /// Predicted feature noise, `batch × feature_count`.
    pub chi: Var,
    /// Label logits (`batch × classes`) or score (`batch × 1`).
    pub psi: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    config: NetConfig,
    params: Vec<Tensor>,
    time_embedding: TimeEmbedding,
}

/// Weights ~ Uniform(±1/√fan_in), biases 0, LayerNorm gain 1 and shift 0.
pub fn init_parameters(config: &NetConfig, seed: u64) -> Result<DenoiserNet, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    let mut linear = |fan_in: usize, fan_out: usize, params: &mut Vec<Tensor>| {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        params.push(Tensor::matrix(fan_in, fan_out, w).expect("sized"));
        params.push(Tensor::zeros(&[fan_out]));
    };
    for (fan_in, fan_out) in config.backbone_dims() {
        linear(fan_in, fan_out, &mut params);
        params.push(Tensor::filled(&[fan_out], 1.0));
        params.push(Tensor::zeros(&[fan_out]));
    }
    linear(config.hidden_dim, config.label_output_width(), &mut params);
    if config.generative {
        linear(config.hidden_dim, config.noise_output_width(), &mut params);
    }
    DenoiserNet::from_parts(config.clone(), params)
}

impl DenoiserNet {
    pub fn from_parts(config: NetConfig, params: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let shapes = config.parameter_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s != p.shape()) {
            return Err(ModelError::ParameterCount {
                expected: config.parameter_count(),
                actual: params.iter().map(Tensor::len).sum(),
            });
        }
        let time_embedding = TimeEmbedding::new(config.time_embed_dim);
        Ok(Self {
            config,
            params,
            time_embedding,
        })
    }

    /// Rebuilds a network from a flat parameter buffer in slot order.
    pub fn from_flat(config: NetConfig, flat: &[f64]) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = config.parameter_count();
        if flat.len() != expected {
            return Err(ModelError::ParameterCount {
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        let params = config
            .parameter_shapes()
            .into_iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let t = Tensor::new(shape, flat[offset..offset + n].to_vec()).expect("sized");
                offset += n;
                t
            })
            .collect();
        Self::from_parts(config, params)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.values().iter().copied()).collect()
    }

    pub fn time_embedding(&self) -> &TimeEmbedding {
        &self.time_embedding
    }

    /// Slot indices `(weight, bias)` of the label head.
    pub fn label_head_slots(&self) -> (usize, usize) {
        let s = self.config.label_head_slot();
        (s, s + 1)
    }

    /// Slot indices `(weight, bias)` of the noise head, if any.
    pub fn noise_head_slots(&self) -> Option<(usize, usize)> {
        self.config.noise_head_slot().map(|s| (s, s + 1))
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .enumerate()
                .map(|(slot, p)| tape.param(slot, p))
                .collect(),
        )
    }

    fn backbone(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        input: Var,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let p = &bound.0;
        let mut h = input;
        for l in 0..self.config.num_hidden_layers {
            let z = tape.matmul(h, p[4 * l])?;
            let z = tape.add_bias(z, p[4 * l + 1])?;
            let a = tape.silu(z);
            let n = tape.layernorm(a, p[4 * l + 2], p[4 * l + 3], LAYERNORM_EPS)?;
            h = match dropout_rng.as_deref_mut() {
                Some(rng) => tape.dropout(n, self.config.dropout_rate, true, rng)?,
                None => n,
            };
        }
        Ok(h)
    }

    fn head(&self, tape: &mut Tape, bound: &BoundParams, h: Var, slot: usize) -> Result<Var, ModelError> {
        let z = tape.matmul(h, bound.0[slot])?;
        Ok(tape.add_bias(z, bound.0[slot + 1])?)
    }

    /// Features → logits or score. Dropout is active iff `dropout_rng` is set.
    pub fn forward_discriminative(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: &Tensor,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        if self.config.generative {
            return Err(ModelError::Config(String::from(
                "forward_discriminative called on a generative network",
            )));
        }
        if x.cols() != self.config.feature_count || x.shape().len() != 2 {
            return Err(ModelError::FeatureCount {
                expected: self.config.feature_count,
                actual: x.cols(),
            });
        }
        let input = tape.constant(x.clone());
        let h = self.backbone(tape, bound, input, dropout_rng)?;
        self.head(tape, bound, h, self.config.label_head_slot())
    }

    /// Assembles `[x_t ‖ y_in ‖ embed(t)]` row by row.
    pub fn denoiser_input(&self, x_t: &Tensor, y_in: &Tensor, t: &[f64]) -> Result<Tensor, ModelError> {
        let c = &self.config;
        let rows = x_t.rows();
        if x_t.shape().len() != 2 || x_t.cols() != c.feature_count {
            return Err(ModelError::FeatureCount {
                expected: c.feature_count,
                actual: x_t.cols(),
            });
        }
        let width = c.label_input_width();
        if y_in.rows() != rows || y_in.cols() != width || t.len() != rows {
            return Err(NumError::Dimension {
                op: "denoiser_input",
                left: vec![rows, c.feature_count],
                right: y_in.shape().to_vec(),
            }
            .into());
        }
        let mut values = Vec::with_capacity(rows * c.input_dim());
        for (i, &ti) in t.iter().enumerate() {
            if !(0.0..=1.0).contains(&ti) {
                return Err(ModelError::TimeRange(ti));
            }
            let y = y_in.row(i);
            let ones = y.iter().filter(|&&v| v == 1.0).count();
            let zeros = y.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != width - 1 {
                return Err(ModelError::InvalidOneHot { row: i, width });
            }
            values.extend_from_slice(x_t.row(i));
            values.extend_from_slice(y);
            values.extend(self.time_embedding.embed(ti));
        }
        Ok(Tensor::matrix(rows, c.input_dim(), values)?)
    }

    /// Noised features, label one-hot (with mask slot) and times → (χ, ψ).
    pub fn forward_denoiser(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x_t: &Tensor,
        y_in: &Tensor,
        t: &[f64],
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<DenoiserOutput, ModelError> {
        if !self.config.generative {
            return Err(ModelError::Config(String::from(
                "forward_denoiser called on a discriminative network",
            )));
        }
        let input = self.denoiser_input(x_t, y_in, t)?;
        let input = tape.constant(input);
        let h = self.backbone(tape, bound, input, dropout_rng)?;
        let psi = self.head(tape, bound, h, self.config.label_head_slot())?;
        let chi = self.head(tape, bound, h, self.config.noise_head_slot().expect("generative"))?;
        Ok(DenoiserOutput { chi, psi })
    }

    /// Inference-mode label head output for clean features.
    ///
    /// Generative networks are queried at `t = 0` with the mask label and the
    /// χ head is never evaluated.
    pub fn label_output(&self, features: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let input = if self.config.generative {
            let rows = features.rows();
            let mask = label_one_hot(None, self.config.label_classes);
            let y: Vec<f64> = (0..rows).flat_map(|_| mask.iter().copied()).collect();
            let y = Tensor::matrix(rows, mask.len(), y)?;
            self.denoiser_input(features, &y, &vec![0.0; rows])?
        } else {
            if features.cols() != self.config.feature_count {
                return Err(ModelError::FeatureCount {
                    expected: self.config.feature_count,
                    actual: features.cols(),
                });
            }
            features.clone()
        };
        let input = tape.constant(input);
        let h = self.backbone(&mut tape, &bound, input, None)?;
        let out = self.head(&mut tape, &bound, h, self.config.label_head_slot())?;
        Ok(tape.value(out).clone())
    }

    /// Relevance score per row: the probability of the highest class for
    /// logit heads, the raw value for score heads.
    pub fn score(&self, features: &Tensor) -> Result<Vec<f64>, ModelError> {
        let out = self.label_output(features)?;
        Ok(match self.config.head {
            LabelHead::Score => out.values().to_vec(),
            LabelHead::Logits => {
                let c = out.cols();
                let mut probs = vec![0.0; c];
                (0..out.rows())
                    .map(|i| {
                        softmax_into(out.row(i), &mut probs);
                        probs[c - 1]
                    })
                    .collect()
            }
        })
    }

    /// `softmax(ψ)[relevant]` from the masked-label, `t = 0` forward pass.
    pub fn score_pointwise(&self, features: &Tensor) -> Result<Vec<f64>, ModelError> {
        if !self.config.generative || self.config.head != LabelHead::Logits {
            return Err(ModelError::Config(String::from(
                "score_pointwise needs a generative pointwise network",
            )));
        }
        self.score(features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::fd::{central_gradient, max_rel_err};

    fn random_features(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap()
    }

    fn zero_label_head(net: &mut DenoiserNet) {
        let (w, b) = net.label_head_slots();
        net.params_mut()[w].values_mut().fill(0.0);
        net.params_mut()[b].values_mut().fill(0.0);
    }

    #[test]
    fn letor_pointwise_parameter_count() {
        let c = NetConfig::disc_pointwise(46, 256, 2);
        // Each hidden layer: weights + bias + LayerNorm gain + shift.
        let expected = (46 * 256 + 256 + 2 * 256) + 3 * (256 * 256 + 256 + 2 * 256) + (256 * 2 + 2);
        assert_eq!(c.parameter_count(), expected);
        assert_eq!(expected, 211_970);
        let net = init_parameters(&c, 0).unwrap();
        assert_eq!(net.flat_parameters().len(), expected);
    }

    #[test]
    fn output_widths() {
        let c = NetConfig::gen_pointwise(46, 256, 2);
        assert_eq!(c.noise_output_width(), 46);
        assert_eq!(c.label_output_width(), 2);
        assert_eq!(c.label_input_width(), 3);
        assert_eq!(c.input_dim(), 46 + 3 + 16);
        let c = NetConfig::gen_pairwise(46, 256);
        assert_eq!(c.label_output_width(), 1);
        assert_eq!(NetConfig::disc_score(46, 256).label_output_width(), 1);
    }

    #[test]
    fn backbones_share_shape_beyond_input() {
        let d = NetConfig::disc_pointwise(46, 256, 2).backbone_dims();
        let g = NetConfig::gen_pointwise(46, 256, 2).backbone_dims();
        assert_eq!(d.len(), g.len());
        assert_eq!(d[1..], g[1..]);
        assert_eq!(d[0].1, g[0].1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = NetConfig::disc_pointwise(4, 8, 2);
        c.dropout_rate = 1.0;
        assert!(init_parameters(&c, 0).is_err());
        let mut c = NetConfig::gen_pointwise(4, 8, 2);
        c.time_embed_dim = 3;
        assert!(c.validate().is_err());
        let mut c = NetConfig::disc_pointwise(4, 8, 2);
        c.num_hidden_layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let c = NetConfig::gen_pointwise(6, 16, 2);
        let a = init_parameters(&c, 3).unwrap();
        assert_eq!(a, init_parameters(&c, 3).unwrap());
        assert_ne!(a, init_parameters(&c, 4).unwrap());
        let mut zero_slots: Vec<usize> = (0..c.num_hidden_layers)
            .flat_map(|l| [4 * l + 1, 4 * l + 3])
            .collect();
        zero_slots.push(a.label_head_slots().1);
        zero_slots.push(a.noise_head_slots().unwrap().1);
        for slot in zero_slots {
            assert!(a.params()[slot].values().iter().all(|&v| v == 0.0), "slot {slot}");
        }
        for l in 0..c.num_hidden_layers {
            assert!(a.params()[4 * l + 2].values().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn init_weight_mean_within_moment_bound() {
        let mut c = NetConfig::disc_pointwise(1024, 1024, 2);
        c.num_hidden_layers = 1;
        let net = init_parameters(&c, 17).unwrap();
        let w = net.params()[0].values();
        let n = w.len() as f64;
        let bound = 1.0 / libm::sqrt(1024.0);
        let mean = w.iter().sum::<f64>() / n;
        // Uniform(±b) has std b/√3; the mean of N draws has std b/√(3N).
        assert!(mean.abs() < 3.0 * bound / libm::sqrt(3.0 * n), "mean {mean}");
        assert!(w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_head_gives_zero_logits_and_half_score() {
        let mut net = init_parameters(&NetConfig::disc_pointwise(5, 8, 2), 1).unwrap();
        zero_label_head(&mut net);
        let x = random_features(4, 5, 2);
        let out = net.label_output(&x).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));

        let mut gen = init_parameters(&NetConfig::gen_pointwise(5, 8, 2), 1).unwrap();
        zero_label_head(&mut gen);
        let s = gen.score_pointwise(&x).unwrap();
        assert!(s.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn inference_is_deterministic_and_in_unit_interval() {
        let net = init_parameters(&NetConfig::gen_pointwise(5, 8, 2), 9).unwrap();
        let x = random_features(7, 5, 3);
        let a = net.score_pointwise(&x).unwrap();
        assert_eq!(a, net.score_pointwise(&x).unwrap());
        assert!(a.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn noise_head_does_not_affect_scores() {
        let mut net = init_parameters(&NetConfig::gen_pointwise(5, 8, 2), 21).unwrap();
        let x = random_features(6, 5, 4);
        let before = net.score_pointwise(&x).unwrap();
        let (w, b) = net.noise_head_slots().unwrap();
        net.params_mut()[w].values_mut().fill(0.0);
        net.params_mut()[b].values_mut().fill(0.0);
        let after = net.score_pointwise(&x).unwrap();
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn denoiser_contract() {
        let net = init_parameters(&NetConfig::gen_pointwise(4, 8, 2), 0).unwrap();
        let x = random_features(2, 4, 1);
        let y = Tensor::from_rows(&[label_one_hot(None, 2), label_one_hot(Some(1), 2)]).unwrap();
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let out = net.forward_denoiser(&mut tape, &bound, &x, &y, &[0.0, 0.5], None).unwrap();
        assert_eq!(tape.value(out.chi).shape(), &[2, 4]);
        assert_eq!(tape.value(out.psi).shape(), &[2, 2]);

        let bad = Tensor::from_rows(&[[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(
            net.forward_denoiser(&mut tape, &bound, &x, &bad, &[0.0, 0.5], None),
            Err(ModelError::InvalidOneHot { row: 0, width: 3 })
        ));
        assert!(matches!(
            net.forward_denoiser(&mut tape, &bound, &x, &y, &[0.0, 1.5], None),
            Err(ModelError::TimeRange(_))
        ));
        let disc = init_parameters(&NetConfig::disc_pointwise(4, 8, 2), 0).unwrap();
        let wrong = random_features(2, 3, 1);
        let b = disc.bind(&mut tape);
        assert!(matches!(
            disc.forward_discriminative(&mut tape, &b, &wrong, None),
            Err(ModelError::FeatureCount { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn time_embedding_properties() {
        let e = TimeEmbedding::new(16);
        assert_eq!(e.dim(), 16);
        let z = e.embed(0.0);
        assert_eq!(&z[..8], &[0.0; 8]);
        assert_eq!(&z[8..], &[1.0; 8]);
        let grid: Vec<Vec<f64>> = (0..=50).map(|i| e.embed(i as f64 / 50.0)).collect();
        for i in 0..grid.len() {
            for j in 0..i {
                let d: f64 = grid[i].iter().zip(&grid[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-3);
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let net = init_parameters(&NetConfig::gen_pairwise(3, 5), 2).unwrap();
        let back = DenoiserNet::from_flat(net.config().clone(), &net.flat_parameters()).unwrap();
        assert_eq!(net, back);
        assert!(DenoiserNet::from_flat(net.config().clone(), &[0.0; 3]).is_err());
    }

    #[test]
    fn full_network_gradient_matches_finite_differences() {
        let mut config = NetConfig::disc_pointwise(4, 6, 2);
        config.dropout_rate = 0.2;
        let net = init_parameters(&config, 5).unwrap();
        let x = random_features(6, 4, 8);
        let targets = [0usize, 1, 1, 0, 1, 0];
        let loss_of = |params: &[Tensor]| {
            let n = DenoiserNet::from_parts(config.clone(), params.to_vec()).unwrap();
            let mut tape = Tape::new();
            let b = n.bind(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let out = n.forward_discriminative(&mut tape, &b, &x, Some(&mut rng)).unwrap();
            let l = tape.softmax_cross_entropy(out, &targets).unwrap();
            (tape, l)
        };
        let (mut tape, l) = loss_of(net.params());
        let grads = tape.backward(l).unwrap();
        let mut f = |ps: &[Tensor]| {
            let (t, l) = loss_of(ps);
            t.value(l).item()
        };
        for slot in 0..net.params().len() {
            let num = central_gradient(net.params(), slot, 1e-4, &mut f);
            let err = max_rel_err(grads.get(slot).unwrap(), &num);
            assert!(err < 1e-3, "slot {slot}: {err}");
        }
    }
}
