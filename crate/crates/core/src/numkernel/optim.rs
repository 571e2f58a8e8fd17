use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay: applied to the parameters directly, not added to the gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig {
            learning_rate,
            weight_decay,
            ..AdamConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad Adam config {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for one parameter block.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Matrix,
    pub v: Matrix,
}

impl AdamState {
    pub fn new(config: AdamConfig, rows: usize, cols: usize) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            step: 0,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
        })
    }
}

/// One Adam update of `param` in place.
pub fn adam_step(param: &mut Matrix, grad: &Matrix, state: &mut AdamState) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(&state.m) || !param.same_shape(&state.v) {
        return Err(Error::invalid(format!(
            "adam shape mismatch: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    let AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
        weight_decay,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    let (m, v) = (state.m.as_mut_slice(), state.v.as_mut_slice());
    for (((p, &g), mi), vi) in param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = beta1 * *mi + (1.0 - beta1) * g;
        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        let m_hat = *mi / bias1;
        let v_hat = *vi / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon) + lr * weight_decay * *p;
    }
    Ok(())
}

/// A model whose trainable state is a fixed, ordered list of matrices.
///
/// Gradients are represented by a value of the same type, so the two lists line up
/// block for block.
pub trait Parameterized {
    fn blocks(&self) -> Vec<(String, &Matrix)>;
    fn blocks_mut(&mut self) -> Vec<&mut Matrix>;

    fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Adam over every block of a [`Parameterized`] model.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            states: Vec::new(),
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grad_blocks = grads.blocks();
        let mut param_blocks = params.blocks_mut();
        if grad_blocks.len() != param_blocks.len() {
            return Err(Error::invalid("gradient block count differs from parameters"));
        }
        if self.states.is_empty() {
            for p in &param_blocks {
                self.states
                    .push(AdamState::new(self.config, p.rows(), p.cols())?);
            }
        }
        if self.states.len() != param_blocks.len() {
            return Err(Error::InvalidState(
                "optimizer was initialized for a different model".into(),
            ));
        }
        for ((p, (_, g)), s) in param_blocks
            .iter_mut()
            .zip(grad_blocks)
            .zip(self.states.iter_mut())
        {
            adam_step(p, g, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = Matrix::from_vec(2, 2, vec![0.3, -1.2, 4.0, 0.0]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::new(0.1, 0.0), 2, 2).unwrap();
        for _ in 0..10 {
            adam_step(&mut p, &Matrix::zeros(2, 2), &mut s).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lr = 0.01;
        let mut p = Matrix::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let g = Matrix::from_vec(1, 3, vec![0.5, -3.0, 1e-3]).unwrap();
        let mut s = AdamState::new(AdamConfig::new(lr, 0.0), 1, 3).unwrap();
        adam_step(&mut p, &g, &mut s).unwrap();
        for (pi, gi) in p.as_slice().iter().zip(g.as_slice()) {
            let moved = 1.0 - pi;
            assert!((moved - lr * gi.signum()).abs() < 1e-6 * lr.max(1.0));
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut s = AdamState::new(AdamConfig::new(0.1, 0.0), 1, 1).unwrap();
        for _ in 0..100 {
            let g = Matrix::from_vec(1, 1, vec![2.0 * x.get(0, 0)]).unwrap();
            adam_step(&mut x, &g, &mut s).unwrap();
        }
        assert!(x.get(0, 0).abs() < 0.5, "x = {}", x.get(0, 0));
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut p = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let mut s = AdamState::new(AdamConfig::new(0.1, 0.5), 1, 1).unwrap();
        adam_step(&mut p, &Matrix::zeros(1, 1), &mut s).unwrap();
        assert!((p.get(0, 0) - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let mut s = AdamState::new(AdamConfig::default(), 2, 2).unwrap();
        assert!(adam_step(&mut p, &Matrix::zeros(1, 4), &mut s).is_err());
    }
}
