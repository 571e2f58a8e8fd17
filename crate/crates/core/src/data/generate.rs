use super::{LabelSource, Labels, SequenceRecord};
use crate::error::{Error, Result};
use crate::numkernel::{Matrix, RngStream};

/// Log-normal duration share of one phase: `median * exp(sigma * z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseDuration {
    pub median: f64,
    pub sigma: f64,
}

/// Phase ordering of a procedure.
///
/// Phases follow `order`, except that the pair `swap` is exchanged with probability
/// `swap_probability`, and phase `p` is left out with probability `skip_probability[p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkflowModel {
    pub n_phases: usize,
    pub order: Vec<usize>,
    pub swap: Option<(usize, usize)>,
    pub swap_probability: f64,
    pub skip_probability: Vec<f64>,
    pub durations: Vec<PhaseDuration>,
}

impl Default for WorkflowModel {
    /// Seven phases, preparation through extraction; packaging and cleaning may swap,
    /// cleaning is occasionally skipped.
    fn default() -> Self {
        let shares = [0.05, 0.33, 0.08, 0.26, 0.07, 0.12, 0.09];
        WorkflowModel {
            n_phases: 7,
            order: (0..7).collect(),
            swap: Some((4, 5)),
            swap_probability: 0.25,
            skip_probability: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0],
            durations: shares
                .iter()
                .map(|&median| PhaseDuration { median, sigma: 0.35 })
                .collect(),
        }
    }
}

impl WorkflowModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_phases;
        if n < 2 {
            return Err(Error::invalid("workflow needs at least 2 phases"));
        }
        let mut seen = vec![false; n];
        if self.order.len() != n || self.order.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("order must be a permutation of the phases"));
        }
        if self.skip_probability.len() != n || self.durations.len() != n {
            return Err(Error::invalid("per-phase parameter lists must have one entry per phase"));
        }
        if !(0.0..=1.0).contains(&self.swap_probability)
            || self.skip_probability.iter().any(|p| !(0.0..1.0).contains(p))
        {
            return Err(Error::invalid("probabilities must lie in [0, 1)"));
        }
        if let Some((a, b)) = self.swap {
            if a >= n || b >= n || a == b {
                return Err(Error::invalid("swap pair must name two distinct phases"));
            }
        }
        if self
            .durations
            .iter()
            .any(|d| !(d.median > 0.0 && d.median.is_finite()) || !(d.sigma >= 0.0 && d.sigma.is_finite()))
        {
            return Err(Error::invalid(
                "degenerate duration parameters: medians must be positive, dispersions non-negative",
            ));
        }
        Ok(())
    }

    /// Phase order of one procedure.
    pub fn sample_phases(&self, rng: &mut RngStream) -> Vec<usize> {
        let mut order = self.order.clone();
        if let Some((a, b)) = self.swap {
            if rng.bernoulli(self.swap_probability) {
                let ia = order.iter().position(|&p| p == a).unwrap();
                let ib = order.iter().position(|&p| p == b).unwrap();
                order.swap(ia, ib);
            }
        }
        order.retain(|&p| !rng.bernoulli(self.skip_probability[p]));
        if order.is_empty() {
            order.push(self.order[0]);
        }
        order
    }

    /// Every phase order the model can produce, with its probability.
    fn variants(&self) -> Vec<(Vec<usize>, f64)> {
        let mut bases = vec![(self.order.clone(), 1.0 - self.swap_probability)];
        if let Some((a, b)) = self.swap {
            let mut swapped = self.order.clone();
            let ia = swapped.iter().position(|&p| p == a).unwrap();
            let ib = swapped.iter().position(|&p| p == b).unwrap();
            swapped.swap(ia, ib);
            bases.push((swapped, self.swap_probability));
        } else {
            bases[0].1 = 1.0;
        }
        let optional: Vec<usize> = (0..self.n_phases).filter(|&p| self.skip_probability[p] > 0.0).collect();
        let mut out = Vec::new();
        for (base, pb) in bases {
            for mask in 0..(1usize << optional.len()) {
                let mut p = pb;
                let mut skipped = vec![false; self.n_phases];
                for (bit, &phase) in optional.iter().enumerate() {
                    let skip = mask & (1 << bit) != 0;
                    let q = self.skip_probability[phase];
                    p *= if skip { q } else { 1.0 - q };
                    skipped[phase] = skip;
                }
                let seq: Vec<usize> = base.iter().copied().filter(|&ph| !skipped[ph]).collect();
                if p > 0.0 && !seq.is_empty() {
                    out.push((seq, p));
                }
            }
        }
        out
    }

    /// First-order successor probabilities `P(next = j | current = i)`; rows of
    /// phases that never have a successor are zero.
    pub fn successor_probabilities(&self) -> Matrix {
        let n = self.n_phases;
        let mut counts = Matrix::zeros(n, n);
        for (seq, p) in self.variants() {
            for w in seq.windows(2) {
                counts.set(w[0], w[1], counts.get(w[0], w[1]) + p);
            }
        }
        for i in 0..n {
            let total: f64 = counts.row(i).iter().sum();
            if total > 0.0 {
                counts.row_mut(i).iter_mut().for_each(|v| *v /= total);
            }
        }
        counts
    }
}

/// Inclusive bounds on the number of timesteps of a generated sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

impl Default for LengthRange {
    fn default() -> Self {
        LengthRange { min: 150, max: 600 }
    }
}

/// Turns phase labels into feature vectors.
///
/// `x_t = m_t + offset + noise_scale * e_t`, where `m_t` tracks the current phase
/// prototype with exponential smoothing, `offset` is drawn once per sequence with
/// standard deviation `noise_scale * offset_ratio`, and `e_t` is unit-variance AR(1)
/// noise with coefficient `noise_correlation`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEmitter {
    pub feature_dim: usize,
    /// `n_phases x feature_dim`
    pub prototypes: Matrix,
    pub noise_scale: f64,
    pub noise_correlation: f64,
    pub offset_ratio: f64,
    pub smoothing: f64,
}

impl FeatureEmitter {
    pub const DEFAULT_FEATURE_DIM: usize = 32;
    pub const DEFAULT_NOISE: f64 = 2.0;

    /// Standard-normal prototypes with the default noise settings.
    pub fn new(n_phases: usize, feature_dim: usize, noise_scale: f64, rng: &mut RngStream) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let mut prototypes = Matrix::zeros(n_phases, feature_dim);
        prototypes.as_mut_slice().iter_mut().for_each(|v| *v = rng.normal());
        let emitter = FeatureEmitter {
            feature_dim,
            prototypes,
            noise_scale,
            noise_correlation: 0.8,
            offset_ratio: 0.5,
            smoothing: 0.3,
        };
        emitter.validate(n_phases)?;
        Ok(emitter)
    }

    pub fn validate(&self, n_phases: usize) -> Result<()> {
        if self.prototypes.shape() != (n_phases, self.feature_dim) {
            return Err(Error::invalid("prototype matrix must be n_phases x feature_dim"));
        }
        for a in 0..n_phases {
            for b in a + 1..n_phases {
                if self.prototypes.row(a) == self.prototypes.row(b) {
                    return Err(Error::invalid(format!("prototypes {a} and {b} coincide")));
                }
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise scale must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.smoothing) || !(0.0..1.0).contains(&self.noise_correlation) {
            return Err(Error::invalid("smoothing and noise correlation must lie in [0, 1)"));
        }
        if !(self.offset_ratio >= 0.0) {
            return Err(Error::invalid("offset ratio must be non-negative"));
        }
        Ok(())
    }

    pub fn emit(&self, phases: &[usize], rng: &mut RngStream) -> Matrix {
        let d = self.feature_dim;
        let mut out = Matrix::zeros(phases.len(), d);
        let offset: Vec<f64> = (0..d)
            .map(|_| self.noise_scale * self.offset_ratio * rng.normal())
            .collect();
        let rho = self.noise_correlation;
        let innovation = (1.0 - rho * rho).sqrt();
        let mut noise: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let mut mean = self.prototypes.row(phases[0]).to_vec();
        for (t, &p) in phases.iter().enumerate() {
            let proto = self.prototypes.row(p);
            if t > 0 {
                for k in 0..d {
                    mean[k] = self.smoothing * mean[k] + (1.0 - self.smoothing) * proto[k];
                    noise[k] = rho * noise[k] + innovation * rng.normal();
                }
            }
            let row = out.row_mut(t);
            for k in 0..d {
                row[k] = mean[k] + offset[k] + self.noise_scale * noise[k];
            }
        }
        out
    }
}

/// Splits `total` into parts proportional to `weights`, each at least 1, by largest
/// remainder (ties to the lower index).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    let spare = total - n;
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * spare as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        parts[k] += 1;
        left -= 1;
    }
    parts.iter().map(|p| p + 1).collect()
}

/// `n_sequences` labeled records named `video000`, `video001`, ...
///
/// Each sequence draws a phase order from `model`, a total length uniformly from
/// `lengths`, and log-normal phase durations rescaled to that length. Record `k`
/// uses the child stream `rng.derive(k)`, so the output is a pure function of
/// the inputs and the seed.
pub fn generate_dataset(
    model: &WorkflowModel,
    emitter: &FeatureEmitter,
    n_sequences: usize,
    lengths: LengthRange,
    rng: &RngStream,
) -> Result<Vec<SequenceRecord>> {
    model.validate()?;
    emitter.validate(model.n_phases)?;
    if n_sequences == 0 {
        return Err(Error::invalid("need at least one sequence"));
    }
    if lengths.min > lengths.max || lengths.min < model.n_phases {
        return Err(Error::invalid(format!(
            "degenerate length range {}..={} for {} phases",
            lengths.min, lengths.max, model.n_phases
        )));
    }
    let width = n_sequences.saturating_sub(1).to_string().len().max(3);
    (0..n_sequences)
        .map(|k| {
            let mut r = rng.derive(k as u64);
            let phases = model.sample_phases(&mut r);
            let total = lengths.min + r.below(lengths.max - lengths.min + 1);
            let weights: Vec<f64> = phases
                .iter()
                .map(|&p| r.log_normal(model.durations[p].median, model.durations[p].sigma))
                .collect();
            let durations = apportion(&weights, total);
            let tags: Vec<usize> = phases
                .iter()
                .zip(&durations)
                .flat_map(|(&p, &d)| std::iter::repeat_n(p, d))
                .collect();
            let features = emitter.emit(&tags, &mut r);
            SequenceRecord::new(
                format!("video{k:0width$}"),
                features,
                Some(Labels {
                    tags,
                    source: LabelSource::GroundTruth,
                }),
            )
        })
        .collect()
}

/// Settings of the default synthetic benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub n_sequences: usize,
    pub lengths: LengthRange,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            n_sequences: 120,
            lengths: LengthRange::default(),
            feature_dim: FeatureEmitter::DEFAULT_FEATURE_DIM,
            noise: FeatureEmitter::DEFAULT_NOISE,
            seed: 0,
        }
    }
}

/// Default workflow, prototypes drawn from one child stream of `seed`, records from another.
pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<SequenceRecord>> {
    let model = WorkflowModel::default();
    let root = RngStream::new(cfg.seed);
    let emitter = FeatureEmitter::new(model.n_phases, cfg.feature_dim, cfg.noise, &mut root.derive(0))?;
    generate_dataset(&model, &emitter, cfg.n_sequences, cfg.lengths, &root.derive(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_setup(noise: f64, seed: u64) -> (WorkflowModel, FeatureEmitter, RngStream) {
        let model = WorkflowModel::default();
        let rng = RngStream::new(seed);
        let emitter = FeatureEmitter::new(7, 32, noise, &mut rng.derive(u64::MAX)).unwrap();
        (model, emitter, rng)
    }

    fn runs(tags: &[usize]) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &t in tags {
            match out.last_mut() {
                Some((p, n)) if *p == t => *n += 1,
                _ => out.push((t, 1)),
            }
        }
        out
    }

    #[test]
    fn noiseless_features_equal_prototypes() {
        let (model, mut emitter, rng) = default_setup(0.0, 1);
        emitter.smoothing = 0.0;
        let data = generate_dataset(&model, &emitter, 5, LengthRange { min: 40, max: 60 }, &rng).unwrap();
        for rec in &data {
            for (t, &y) in rec.tags().unwrap().iter().enumerate() {
                assert_eq!(rec.features.row(t), emitter.prototypes.row(y));
                let nearest = (0..7)
                    .min_by(|&a, &b| {
                        let da: f64 = rec.features.row(t).iter().zip(emitter.prototypes.row(a)).map(|(x, p)| (x - p).powi(2)).sum();
                        let db: f64 = rec.features.row(t).iter().zip(emitter.prototypes.row(b)).map(|(x, p)| (x - p).powi(2)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                assert_eq!(nearest, y);
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_datasets() {
        let (model, emitter, rng) = default_setup(2.0, 7);
        let a = generate_dataset(&model, &emitter, 4, LengthRange::default(), &rng).unwrap();
        let b = generate_dataset(&model, &emitter, 4, LengthRange::default(), &rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn phase_order_and_run_structure() {
        let (model, emitter, rng) = default_setup(2.0, 3);
        let data = generate_dataset(&model, &emitter, 120, LengthRange::default(), &rng).unwrap();
        let support = model.successor_probabilities();
        let mut swapped = 0;
        for rec in &data {
            let tags = rec.tags().unwrap();
            assert!((150..=600).contains(&tags.len()));
            let r = runs(tags);
            let first4: Vec<usize> = r.iter().map(|&(p, _)| p).filter(|&p| p < 4).collect();
            assert_eq!(first4, vec![0, 1, 2, 3], "{}", rec.id);
            for w in r.windows(2) {
                assert!(support.get(w[0].0, w[1].0) > 0.0);
            }
            let pos = |ph: usize| r.iter().position(|&(p, _)| p == ph);
            if let (Some(a), Some(b)) = (pos(4), pos(5)) {
                if b < a {
                    swapped += 1;
                }
            }
        }
        assert!(swapped > 0 && swapped < 120, "swapped {swapped}");
    }

    #[test]
    fn successor_rows_sum_to_one() {
        let m = WorkflowModel::default().successor_probabilities();
        for i in 0..7 {
            let total: f64 = m.row(i).iter().sum();
            if i == 6 {
                // extraction ends the procedure unless the swap moves it
                assert!(total == 0.0 || (total - 1.0).abs() < 1e-12);
            } else {
                assert!((total - 1.0).abs() < 1e-12, "row {i}: {total}");
            }
        }
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        let (mut model, emitter, rng) = default_setup(1.0, 0);
        assert!(generate_dataset(&model, &emitter, 1, LengthRange { min: 3, max: 10 }, &rng).is_err());
        assert!(generate_dataset(&model, &emitter, 1, LengthRange { min: 20, max: 10 }, &rng).is_err());
        model.durations[2].median = 0.0;
        assert!(generate_dataset(&model, &emitter, 1, LengthRange::default(), &rng).is_err());
    }

    #[test]
    fn apportion_respects_total_and_minimum() {
        let parts = apportion(&[0.01, 10.0, 0.01], 20);
        assert_eq!(parts.iter().sum::<usize>(), 20);
        assert!(parts.iter().all(|&p| p >= 1));
    }
}
