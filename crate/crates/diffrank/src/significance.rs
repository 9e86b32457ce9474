//! Two-sided paired t-test over per-query metric vectors.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::Error;

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

/// Paired t-test of `a − b` with `n − 1` degrees of freedom.
///
/// Zero variance of the differences gives `p = 1` (and `t = 0`) when the mean
/// difference is zero, otherwise `p = 0` with an infinite `t`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, Error> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "paired t-test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Config(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, significant: false }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                significant: true,
            }
        });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("positive degrees of freedom");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        significant: p < ALPHA,
    })
}
