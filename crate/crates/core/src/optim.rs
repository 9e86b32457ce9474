//! AdamW with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::numcore::{Gradients, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter slot {slot}")]
    NonFiniteGradient { slot: usize },
    #[error("gradient for slot {slot} has {actual} values, parameter has {expected}")]
    Shape {
        slot: usize,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &[Tensor], config: AdamWConfig) -> Self {
        Self {
            config,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }
}

/// One AdamW update. Slots without a gradient are treated as zero-gradient
/// (they still decay). On a non-finite gradient nothing is modified.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &Gradients,
    state: &mut OptimState,
) -> Result<(), OptimError> {
    for (slot, g) in grads.iter() {
        let expected = params.get(slot).map_or(0, Tensor::len);
        if g.len() != expected {
            return Err(OptimError::Shape {
                slot,
                expected,
                actual: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(OptimError::NonFiniteGradient { slot });
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - libm::pow(c.beta1, t as f64);
    let bias2 = 1.0 - libm::pow(c.beta2, t as f64);
    let decay = 1.0 - c.learning_rate * c.weight_decay;

    for (slot, p) in params.iter_mut().enumerate() {
        let g = grads.get(slot);
        let m = &mut state.first_moment[slot];
        let v = &mut state.second_moment[slot];
        for (i, theta) in p.values_mut().iter_mut().enumerate() {
            let gi = g.map_or(0.0, |g| g[i]);
            *theta *= decay;
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            *theta -= c.learning_rate * m_hat / (libm::sqrt(v_hat) + c.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tape;

    fn grads_for(params: &[Tensor], g: &[f64]) -> Gradients {
        let mut tape = Tape::new();
        let p = tape.param(0, &params[0]);
        let c = tape.constant(Tensor::vector(g.to_vec()));
        let prod = tape.mul(p, c).unwrap();
        let l = tape.sum(prod);
        tape.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut params = vec![Tensor::vector(vec![0.5, -1.0, 2.0])];
        let before = params.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut state = OptimState::new(&params, cfg);
        let g = grads_for(&params, &[0.0, 0.0, 0.0]);
        adamw_step(&mut params, &g, &mut state).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let init = vec![0.5, -1.0, 2.0, 0.0];
        let g = [0.3, -2.0, 1e-3, 5.0];
        let mut params = vec![Tensor::vector(init.clone())];
        let cfg = AdamWConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut state = OptimState::new(&params, cfg);
        let grads = grads_for(&params, &g);
        adamw_step(&mut params, &grads, &mut state).unwrap();
        for i in 0..4 {
            let expected = init[i] - 0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((params[0].values()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_only_shrinks_norm() {
        let mut params = vec![Tensor::vector(vec![0.5, -1.0, 2.0])];
        let mut state = OptimState::new(
            &params,
            AdamWConfig {
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
        );
        let norm = |p: &Tensor| p.values().iter().map(|v| v * v).sum::<f64>();
        let mut last = norm(&params[0]);
        for _ in 0..5 {
            let g = grads_for(&params, &[0.0; 3]);
            adamw_step(&mut params, &g, &mut state).unwrap();
            let n = norm(&params[0]);
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let before = params.clone();
        let mut state = OptimState::new(&params, AdamWConfig::default());
        let g = grads_for(&params, &[f64::NAN, 1.0]);
        assert_eq!(
            adamw_step(&mut params, &g, &mut state),
            Err(OptimError::NonFiniteGradient { slot: 0 })
        );
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }
}
