//! Linear-chain CRF over per-timestep logits.
//!
//! A logit sequence is a `Matrix` with one row per timestep and one column per class.
//! The score of a tag sequence is the sum of its emissions plus the transition scores
//! `theta[y_t, y_{t+1}]` between consecutive tags; there are no start or stop scores.
//! Normalization, marginals and gradients come from the forward-backward recursions in
//! log space, and [`brute_force_oracle`] enumerates every sequence for cross-checking.

use crate::error::{Error, Result};
use crate::numkernel::{log_sum_exp_unchecked, Matrix};

/// Per-timestep logits, `T+1` rows by `N_c` columns.
pub type LogitSequence = Matrix;

/// Tags `y_0..y_T`, each in `[0, N_c)`.
pub type TagSequence = Vec<usize>;

/// Enumeration limit for [`brute_force_oracle`].
pub const ORACLE_LIMIT: u128 = 1_000_000;

/// `theta[i, j]` scores a move from class `i` at `t` to class `j` at `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    pub fn new(theta: Matrix) -> Result<Self> {
        if theta.rows() != theta.cols() {
            return Err(Error::invalid(format!(
                "transition matrix must be square, got {:?}",
                theta.shape()
            )));
        }
        if theta.rows() < 2 {
            return Err(Error::invalid("transition matrix needs at least 2 classes"));
        }
        if !theta.is_finite() {
            return Err(Error::invalid("transition matrix has non-finite entries"));
        }
        Ok(TransitionMatrix(theta))
    }

    pub fn zeros(n_classes: usize) -> Result<Self> {
        TransitionMatrix::new(Matrix::zeros(n_classes, n_classes))
    }

    pub fn n_classes(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0.get(from, to)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn as_matrix_mut(&mut self) -> &mut Matrix {
        &mut self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

fn check_logits(logits: &Matrix, theta: &TransitionMatrix) -> Result<()> {
    if logits.rows() == 0 {
        return Err(Error::invalid("empty logit sequence"));
    }
    if logits.cols() != theta.n_classes() {
        return Err(Error::invalid(format!(
            "logits have {} classes, transition matrix has {}",
            logits.cols(),
            theta.n_classes()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::invalid("logit sequence has non-finite entries"));
    }
    Ok(())
}

fn check_tags(logits: &Matrix, tags: &[usize]) -> Result<()> {
    if tags.len() != logits.rows() {
        return Err(Error::invalid(format!(
            "{} tags for {} timesteps",
            tags.len(),
            logits.rows()
        )));
    }
    if let Some((t, &y)) = tags.iter().enumerate().find(|(_, &y)| y >= logits.cols()) {
        return Err(Error::invalid(format!(
            "tag {y} at timestep {t} is out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Emission plus transition score of `tags`.
pub fn crf_score(logits: &LogitSequence, tags: &[usize], theta: &TransitionMatrix) -> Result<f64> {
    check_logits(logits, theta)?;
    check_tags(logits, tags)?;
    Ok(score_unchecked(logits, tags, theta))
}

fn score_unchecked(logits: &Matrix, tags: &[usize], theta: &TransitionMatrix) -> f64 {
    let emission: f64 = tags.iter().enumerate().map(|(t, &y)| logits.get(t, y)).sum();
    let transition: f64 = tags.windows(2).map(|w| theta.get(w[0], w[1])).sum();
    emission + transition
}

/// Forward log-messages: row `t` holds `alpha_t`.
fn forward_messages(logits: &Matrix, theta: &TransitionMatrix) -> Matrix {
    let (steps, n) = logits.shape();
    let mut alpha = Matrix::zeros(steps, n);
    alpha.row_mut(0).copy_from_slice(logits.row(0));
    let mut scratch = vec![0.0; n];
    for t in 1..steps {
        for j in 0..n {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = alpha.get(t - 1, i) + theta.get(i, j);
            }
            let v = logits.get(t, j) + log_sum_exp_unchecked(&scratch);
            alpha.set(t, j, v);
        }
    }
    alpha
}

/// Backward log-messages: row `t` holds `beta_t`, with `beta_T = 0`.
fn backward_messages(logits: &Matrix, theta: &TransitionMatrix) -> Matrix {
    let (steps, n) = logits.shape();
    let mut beta = Matrix::zeros(steps, n);
    let mut scratch = vec![0.0; n];
    for t in (0..steps - 1).rev() {
        for i in 0..n {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = theta.get(i, j) + logits.get(t + 1, j) + beta.get(t + 1, j);
            }
            beta.set(t, i, log_sum_exp_unchecked(&scratch));
        }
    }
    beta
}

/// `log` of the sum of `exp(score)` over all `N_c^(T+1)` tag sequences.
pub fn crf_log_partition(logits: &LogitSequence, theta: &TransitionMatrix) -> Result<f64> {
    check_logits(logits, theta)?;
    let alpha = forward_messages(logits, theta);
    Ok(log_sum_exp_unchecked(alpha.row(alpha.rows() - 1)))
}

/// Posterior marginals under the CRF.
#[derive(Clone, Debug)]
pub struct Marginals {
    pub log_partition: f64,
    /// `unary[t][k] = P(y_t = k | S)`
    pub unary: Matrix,
    /// `pairwise[t][(i, j)] = P(y_t = i, y_{t+1} = j | S)`, one matrix per `t < T`.
    pub pairwise: Vec<Matrix>,
}

pub fn crf_marginals(logits: &LogitSequence, theta: &TransitionMatrix) -> Result<Marginals> {
    check_logits(logits, theta)?;
    let (steps, n) = logits.shape();
    let alpha = forward_messages(logits, theta);
    let beta = backward_messages(logits, theta);
    let log_z = log_sum_exp_unchecked(alpha.row(steps - 1));
    let mut unary = Matrix::zeros(steps, n);
    for t in 0..steps {
        for k in 0..n {
            unary.set(t, k, (alpha.get(t, k) + beta.get(t, k) - log_z).exp());
        }
    }
    let pairwise = (0..steps - 1)
        .map(|t| pairwise_at(logits, theta, &alpha, &beta, log_z, t))
        .collect();
    Ok(Marginals {
        log_partition: log_z,
        unary,
        pairwise,
    })
}

fn pairwise_at(
    logits: &Matrix,
    theta: &TransitionMatrix,
    alpha: &Matrix,
    beta: &Matrix,
    log_z: f64,
    t: usize,
) -> Matrix {
    let n = logits.cols();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let lp = alpha.get(t, i) + theta.get(i, j) + logits.get(t + 1, j) + beta.get(t + 1, j)
                - log_z;
            p.set(i, j, lp.exp());
        }
    }
    p
}

/// Negative log-likelihood of a tag sequence and its exact gradients.
#[derive(Clone, Debug)]
pub struct CrfLoss {
    pub loss: f64,
    pub d_logits: Matrix,
    pub d_theta: Matrix,
}

/// `-log p(tags | logits)` with gradients wrt logits and transitions.
pub fn crf_nll(logits: &LogitSequence, tags: &[usize], theta: &TransitionMatrix) -> Result<CrfLoss> {
    check_logits(logits, theta)?;
    check_tags(logits, tags)?;
    let (steps, n) = logits.shape();
    let alpha = forward_messages(logits, theta);
    let beta = backward_messages(logits, theta);
    let log_z = log_sum_exp_unchecked(alpha.row(steps - 1));
    let loss = log_z - score_unchecked(logits, tags, theta);

    let mut d_logits = Matrix::zeros(steps, n);
    for t in 0..steps {
        for k in 0..n {
            d_logits.set(t, k, (alpha.get(t, k) + beta.get(t, k) - log_z).exp());
        }
        let y = tags[t];
        d_logits.set(t, y, d_logits.get(t, y) - 1.0);
    }
    let mut d_theta = Matrix::zeros(n, n);
    for t in 0..steps - 1 {
        let p = pairwise_at(logits, theta, &alpha, &beta, log_z, t);
        d_theta.add_scaled(&p, 1.0)?;
        let (a, b) = (tags[t], tags[t + 1]);
        d_theta.set(a, b, d_theta.get(a, b) - 1.0);
    }
    // rounding can push an exactly-determined sequence a hair below zero
    Ok(CrfLoss {
        loss: loss.max(0.0),
        d_logits,
        d_theta,
    })
}

/// Highest-scoring tag sequence and its score.
///
/// Every max decision, including the final one, keeps the lowest class index among
/// ties.
pub fn viterbi_decode(logits: &LogitSequence, theta: &TransitionMatrix) -> Result<(TagSequence, f64)> {
    check_logits(logits, theta)?;
    let (steps, n) = logits.shape();
    let mut delta: Vec<f64> = logits.row(0).to_vec();
    let mut next = vec![0.0; n];
    let mut back = vec![0usize; steps * n];
    for t in 1..steps {
        for j in 0..n {
            let mut best_i = 0;
            let mut best = delta[0] + theta.get(0, j);
            for (i, &d) in delta.iter().enumerate().skip(1) {
                let v = d + theta.get(i, j);
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            back[t * n + j] = best_i;
            next[j] = logits.get(t, j) + best;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut tags = vec![0usize; steps];
    tags[steps - 1] = crate::numkernel::argmax(&delta);
    for t in (1..steps).rev() {
        tags[t - 1] = back[t * n + tags[t]];
    }
    let score = score_unchecked(logits, &tags, theta);
    Ok((tags, score))
}

/// Exhaustive enumeration results, for testing only.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub best: TagSequence,
    pub best_score: f64,
    /// Gap between the best and second-best score (infinite with a single sequence).
    pub margin: f64,
    pub log_partition: f64,
    pub unary: Matrix,
    pub pairwise: Vec<Matrix>,
}

/// Scores every tag sequence explicitly. Refuses instances above [`ORACLE_LIMIT`].
pub fn brute_force_oracle(logits: &LogitSequence, theta: &TransitionMatrix) -> Result<OracleResult> {
    check_logits(logits, theta)?;
    let (steps, n) = logits.shape();
    let size = (n as u128).checked_pow(steps as u32).unwrap_or(u128::MAX);
    if size > ORACLE_LIMIT {
        return Err(Error::TooLarge {
            size,
            limit: ORACLE_LIMIT,
        });
    }
    let total = size as usize;
    let mut scores = Vec::with_capacity(total);
    let mut tags = vec![0usize; steps];
    for _ in 0..total {
        scores.push(score_unchecked(logits, &tags, theta));
        odometer_increment(&mut tags, n);
    }
    let log_z = log_sum_exp_unchecked(&scores);

    let mut best_idx = 0;
    for (idx, &s) in scores.iter().enumerate() {
        if s > scores[best_idx] {
            best_idx = idx;
        }
    }
    let best_score = scores[best_idx];
    let second = scores
        .iter()
        .enumerate()
        .filter(|&(idx, _)| idx != best_idx)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut unary = Matrix::zeros(steps, n);
    let mut pairwise = vec![Matrix::zeros(n, n); steps.saturating_sub(1)];
    tags.iter_mut().for_each(|y| *y = 0);
    let mut best = tags.clone();
    for (idx, &s) in scores.iter().enumerate() {
        if idx == best_idx {
            best.copy_from_slice(&tags);
        }
        let p = (s - log_z).exp();
        for (t, &y) in tags.iter().enumerate() {
            unary.set(t, y, unary.get(t, y) + p);
        }
        for (t, w) in tags.windows(2).enumerate() {
            let m = &mut pairwise[t];
            m.set(w[0], w[1], m.get(w[0], w[1]) + p);
        }
        odometer_increment(&mut tags, n);
    }
    Ok(OracleResult {
        best,
        best_score,
        margin: best_score - second,
        log_partition: log_z,
        unary,
        pairwise,
    })
}

/// Little-endian-in-time counter over `[0, n)^len`, last position most significant.
fn odometer_increment(tags: &mut [usize], n: usize) {
    for y in tags.iter_mut() {
        *y += 1;
        if *y < n {
            return;
        }
        *y = 0;
    }
}
