//! Dense tensors and reverse-mode differentiation for feedforward networks.

mod kernels;
mod tape;
mod tensor;

use alloc::vec::Vec;

pub use kernels::{log_sum_exp, sigmoid, softmax_into, softplus};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Default LayerNorm epsilon.
pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape implies {expected} values but {actual} were given")]
    ShapeData { expected: usize, actual: usize },
    #[error("index {index} out of range for {bound} classes")]
    Index { index: usize, bound: usize },
    #[error("invalid parameter: {0}")]
    Parameter(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,
}

#[cfg(test)]
pub(crate) mod fd {
    use alloc::vec::Vec;

    use super::Tensor;

    /// Central finite-difference gradient of `f` at `params[slot]`.
    pub fn central_gradient(
        params: &[Tensor],
        slot: usize,
        h: f64,
        f: &mut dyn FnMut(&[Tensor]) -> f64,
    ) -> Vec<f64> {
        let mut work = params.to_vec();
        let mut out = Vec::with_capacity(params[slot].len());
        for i in 0..params[slot].len() {
            let orig = work[slot].values()[i];
            work[slot].values_mut()[i] = orig + h;
            let plus = f(&work);
            work[slot].values_mut()[i] = orig - h;
            let minus = f(&work);
            work[slot].values_mut()[i] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
        out
    }

    /// Largest elementwise relative error, with an absolute floor so
    /// near-zero components do not dominate.
    pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use alloc::vec::Vec;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::fd::{central_gradient, max_rel_err};
    use super::*;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn tensor_rejects_inconsistent_shape() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(NumError::ShapeData { expected: 6, actual: 5 })
        ));
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
        let out = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(out).values(), &[3.0, 4.0]);

        let a = tape.constant(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).values(), &[11.0]);
        assert_eq!(tape.value(out).shape(), &[1, 1]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(NumError::Dimension { op: "matmul", .. })));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
        let mut tape = Tape::new();
        let a = tape.param(0, &params[0]);
        let b = tape.param(1, &params[1]);
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum(c);
        let grads = tape.backward(loss).unwrap();

        // d sum(AB) / dA_ip = Σ_j B_pj
        let b_row_sums: Vec<f64> = (0..4).map(|p| params[1].row(p).iter().sum()).collect();
        for i in 0..3 {
            for p in 0..4 {
                assert!((grads.get(0).unwrap()[i * 4 + p] - b_row_sums[p]).abs() < 1e-12);
            }
        }
        let mut f = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let a = t.constant(ps[0].clone());
            let b = t.constant(ps[1].clone());
            let c = t.matmul(a, b).unwrap();
            let s = t.sum(c);
            t.value(s).item()
        };
        for slot in 0..2 {
            let num = central_gradient(&params, slot, 1e-5, &mut f);
            assert!(max_rel_err(grads.get(slot).unwrap(), &num) < 1e-6);
        }
    }

    #[test]
    fn silu_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 50.0, 1.0]));
        let y = tape.silu(x);
        let v = tape.value(y).values();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 50.0).abs() < 1e-12);
        assert!((v[2] - sigmoid(1.0)).abs() < 1e-15);

        let params = vec![Tensor::vector(vec![1.0])];
        let mut tape = Tape::new();
        let x = tape.param(0, &params[0]);
        let y = tape.silu(x);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        let num = central_gradient(&params, 0, 1e-6, &mut |ps| ps[0].item() * sigmoid(ps[0].item()));
        assert!(max_rel_err(g.get(0).unwrap(), &num) < 1e-6);
    }

    #[test]
    fn layernorm_degenerate_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[2.0, 2.0, 2.0]]).unwrap());
        let g = tape.constant(Tensor::filled(&[3], 1.0));
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.layernorm(x, g, b, LAYERNORM_EPS).unwrap();
        assert!(tape.value(y).values().iter().all(|&v| v == 0.0));

        let x = tape.constant(Tensor::from_rows(&[[1.0, -1.0]]).unwrap());
        let g = tape.constant(Tensor::filled(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.layernorm(x, g, b, 1e-15).unwrap();
        let v = tape.value(y).values();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn layernorm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            random(&[4, 8], &mut rng),
            random(&[8], &mut rng),
            random(&[8], &mut rng),
            random(&[4, 8], &mut rng),
        ];
        // Weighted sum so the gradient is not trivially zero.
        let build = |t: &mut Tape, vars: &[Var]| {
            let y = t.layernorm(vars[0], vars[1], vars[2], LAYERNORM_EPS).unwrap();
            let w = t.mul(y, vars[3]).unwrap();
            t.sum(w)
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..3).map(|i| tape.param(i, &params[i])).collect::<Vec<_>>();
        let w = tape.constant(params[3].clone());
        let all = [vars[0], vars[1], vars[2], w];
        let loss = build(&mut tape, &all);
        let grads = tape.backward(loss).unwrap();
        let mut f = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
            let l = build(&mut t, &vars);
            t.value(l).item()
        };
        for slot in 0..3 {
            let num = central_gradient(&params, slot, 1e-5, &mut f);
            assert!(max_rel_err(grads.get(slot).unwrap(), &num) < 1e-4, "slot {slot}");
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(matches!(
            tape.dropout(x, 1.0, true, &mut rng),
            Err(NumError::Parameter(_))
        ));
    }

    #[test]
    fn dropout_zero_fraction_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[n], 1.0));
        let y = tape.dropout(x, 0.1, true, &mut rng).unwrap();
        let vals = tape.value(y).values();
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.1).abs() < 0.002, "zero fraction {zeros}");
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
    }

    #[test]
    fn softmax_cross_entropy_values() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::from_rows(&[[0.0, 0.0]]).unwrap());
        let ce = tape.softmax_cross_entropy(l, &[0]).unwrap();
        assert!((tape.value(ce).item() - core::f64::consts::LN_2).abs() < 1e-12);

        let l = tape.constant(Tensor::from_rows(&[[1000.0, 0.0]]).unwrap());
        let ce = tape.softmax_cross_entropy(l, &[0]).unwrap();
        assert!(tape.value(ce).item().abs() < 1e-12);

        let l = tape.constant(Tensor::from_rows(&[[1e4, -1e4, 0.0], [-1e4, 1e4, 5.0]]).unwrap());
        let ce = tape.softmax_cross_entropy(l, &[1, 0]).unwrap();
        assert!(tape.value(ce).item().is_finite());

        assert!(matches!(
            tape.softmax_cross_entropy(l, &[3, 0]),
            Err(NumError::Index { index: 3, bound: 3 })
        ));
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = vec![random(&[5, 3], &mut rng)];
        let targets = [0usize, 2, 1, 1, 0];
        let mut tape = Tape::new();
        let l = tape.param(0, &params[0]);
        let ce = tape.softmax_cross_entropy(l, &targets).unwrap();
        let g = tape.backward(ce).unwrap();
        let num = central_gradient(&params, 0, 1e-5, &mut |ps| {
            let mut t = Tape::new();
            let l = t.constant(ps[0].clone());
            let ce = t.softmax_cross_entropy(l, &targets).unwrap();
            t.value(ce).item()
        });
        assert!(max_rel_err(g.get(0).unwrap(), &num) < 1e-5);
    }

    #[test]
    fn backward_closed_forms_and_contract() {
        let p = Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(0, &p);
        let s = tape.sum(v);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(0).unwrap(), &[1.0; 4]);
        assert_eq!(tape.backward(s), Err(NumError::BackwardTwice));

        let c = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, -2.0]).unwrap();
        tape.reset();
        let v = tape.param(0, &p);
        let cv = tape.constant(c.clone());
        let d = tape.sub(v, cv).unwrap();
        let sq = tape.square(d);
        let m = tape.mean(sq);
        let g = tape.backward(m).unwrap();
        for i in 0..4 {
            let expected = 2.0 * (p.values()[i] - c.values()[i]) / 4.0;
            assert!((g.get(0).unwrap()[i] - expected).abs() < 1e-15);
        }

        tape.reset();
        let v = tape.param(0, &p);
        assert!(matches!(tape.backward(v), Err(NumError::NonScalarLoss(_))));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let p = Tensor::vector(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let a = tape.param(0, &p);
        let b = tape.param(0, &p);
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(0).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn concat_and_softplus_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = vec![random(&[3, 1], &mut rng), random(&[3, 2], &mut rng)];
        let build = |t: &mut Tape, a: Var, b: Var| {
            let c = t.concat_cols(&[a, b]).unwrap();
            let s = t.softplus(c);
            let ce = t.softmax_cross_entropy(c, &[0, 1, 2]).unwrap();
            let sum = t.sum(s);
            t.add(sum, ce).unwrap()
        };
        let mut tape = Tape::new();
        let a = tape.param(0, &params[0]);
        let b = tape.param(1, &params[1]);
        let l = build(&mut tape, a, b);
        let g = tape.backward(l).unwrap();
        let mut f = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let a = t.constant(ps[0].clone());
            let b = t.constant(ps[1].clone());
            let l = build(&mut t, a, b);
            t.value(l).item()
        };
        for slot in 0..2 {
            let num = central_gradient(&params, slot, 1e-5, &mut f);
            assert!(max_rel_err(g.get(slot).unwrap(), &num) < 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let x = random(&[4, 6], &mut rng);
            let mut tape = Tape::new();
            let xv = tape.param(0, &x);
            let y = tape.silu(xv);
            let y = tape.dropout(y, 0.3, true, &mut rng).unwrap();
            let l = tape.sum(y);
            let val = tape.value(l).item();
            (val.to_bits(), tape.backward(l).unwrap())
        };
        assert_eq!(run(), run());
    }
}
