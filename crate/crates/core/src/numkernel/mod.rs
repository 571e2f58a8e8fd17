//! Dense linear algebra, stable reductions, seeded randomness, Adam, and a
//! central-difference gradient checker. All arithmetic is `f64`.

mod matrix;
mod optim;
mod rng;

pub use matrix::{axpy, dot, matmul, Matrix};
pub use optim::{adam_step, Adam, AdamConfig, AdamState, Parameterized};
pub use rng::{mix_seed, RngStream};

use crate::error::{Error, Result};

/// `log(sum(exp(v)))` evaluated around the maximum.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty vector"));
    }
    Ok(log_sum_exp_unchecked(v))
}

/// Same as [`log_sum_exp`] for callers that guarantee a nonempty slice.
#[inline]
pub fn log_sum_exp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Numerically stable softmax of `v` into `out`.
pub fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Central-difference check of `analytic` against `f` at `param`.
///
/// Returns the largest `|fd - analytic| / max(1, |analytic|)` over coordinates.
pub fn finite_diff_check<F>(mut f: F, param: &Matrix, analytic: &Matrix, h: f64) -> Result<f64>
where
    F: FnMut(&Matrix) -> f64,
{
    if !param.same_shape(analytic) {
        return Err(Error::invalid(format!(
            "analytic gradient shape {:?} differs from parameter {:?}",
            analytic.shape(),
            param.shape()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = param.clone();
    let mut worst = 0.0f64;
    for idx in 0..param.len() {
        let (row, col) = (idx / param.cols(), idx % param.cols());
        let x0 = param.as_slice()[idx];
        probe.as_mut_slice()[idx] = x0 + h;
        let plus = f(&probe);
        probe.as_mut_slice()[idx] = x0 - h;
        let minus = f(&probe);
        probe.as_mut_slice()[idx] = x0;
        for value in [plus, minus] {
            if !value.is_finite() {
                return Err(Error::NonFinite { row, col, value });
            }
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.as_slice()[idx];
        worst = worst.max((numeric - a).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
