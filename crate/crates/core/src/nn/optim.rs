//! SGD with classical momentum and L2 weight decay folded into the velocity.

use serde::{Deserialize, Serialize};

use super::mlp::{GradientStore, MlpModel};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter buffer of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            velocity: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// `v ← μ·v + g + λ·θ ; θ ← θ − η·v`
pub fn sgd_step(
    model: &mut MlpModel,
    grads: &GradientStore,
    cfg: &SgdConfig,
    state: &mut SgdState,
) -> Result<()> {
    let grad_bufs = grads.params();
    let params = model.params_mut();
    if params.len() != grad_bufs.len() || params.len() != state.velocity.len() {
        return dim_err("optimizer state does not mirror the model");
    }
    for ((theta, g), v) in params.into_iter().zip(grad_bufs).zip(&mut state.velocity) {
        if theta.len() != g.len() || theta.len() != v.len() {
            return dim_err("parameter/gradient/velocity buffer lengths differ");
        }
        for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *t;
            *t -= cfg.learning_rate * *vi;
        }
    }
    Ok(())
}

/// Sums gradients over `every` micro-batches and applies one SGD step per
/// full window. `every = None` never steps on its own; call [`flush`].
///
/// [`flush`]: Accumulator::flush
#[derive(Debug, Clone)]
pub struct Accumulator {
    pub grads: GradientStore,
    every: Option<usize>,
    pending: usize,
    pub steps_taken: usize,
}

impl Accumulator {
    pub fn new(model: &MlpModel, every: Option<usize>) -> Self {
        Self {
            grads: GradientStore::zeros_like(model),
            every: every.map(|k| k.max(1)),
            pending: 0,
            steps_taken: 0,
        }
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Records that one micro-batch's gradients were added to `self.grads`;
    /// steps when the window is full. Returns whether a step happened.
    pub fn commit(
        &mut self,
        model: &mut MlpModel,
        cfg: &SgdConfig,
        state: &mut SgdState,
    ) -> Result<bool> {
        self.pending += 1;
        if self.every.is_some_and(|k| self.pending >= k) {
            self.flush(model, cfg, state)
        } else {
            Ok(false)
        }
    }

    /// Steps on whatever has accumulated, if anything.
    pub fn flush(&mut self, model: &mut MlpModel, cfg: &SgdConfig, state: &mut SgdState) -> Result<bool> {
        if self.pending == 0 {
            return Ok(false);
        }
        sgd_step(model, &self.grads, cfg, state)?;
        self.grads.zero();
        self.pending = 0;
        self.steps_taken += 1;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, Dense};
    use crate::nn::Matrix;

    fn tiny() -> MlpModel {
        let mut enc = Dense::zeros(2, 2, Activation::Relu);
        enc.weight = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        enc.bias = vec![0.1, -0.2];
        let mut cls = Dense::zeros(2, 1, Activation::Identity);
        cls.weight = Matrix::from_rows(&[vec![1.5, -0.5]]).unwrap();
        MlpModel::from_layers(vec![enc], cls, vec![]).unwrap()
    }

    fn filled_grads(model: &MlpModel) -> GradientStore {
        let mut g = GradientStore::zeros_like(model);
        for (k, buf) in g.params_mut().into_iter().enumerate() {
            for (i, v) in buf.iter_mut().enumerate() {
                *v = 0.1 * (k as f64 + 1.0) - 0.05 * i as f64;
            }
        }
        g
    }

    #[test]
    fn zero_grads_zero_decay_is_noop() {
        let mut m = tiny();
        let before = m.clone();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut st = SgdState::new(&m);
        let g = GradientStore::zeros_like(&m);
        sgd_step(&mut m, &g, &cfg, &mut st).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn vanilla_step_is_exact() {
        let mut m = tiny();
        let before = m.clone();
        let cfg = SgdConfig {
            learning_rate: 0.3,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut st = SgdState::new(&m);
        let g = filled_grads(&m);
        sgd_step(&mut m, &g, &cfg, &mut st).unwrap();
        for ((new, old), gb) in m.params().iter().zip(before.params()).zip(g.params()) {
            for ((a, b), gi) in new.iter().zip(old).zip(gb) {
                assert_eq!(*a, b - 0.3 * gi);
            }
        }
    }

    #[test]
    fn two_momentum_steps_match_unrolled_recurrence() {
        let mut m = tiny();
        let theta0: Vec<Vec<f64>> = m.params().iter().map(|p| p.to_vec()).collect();
        let (lr, mu, wd) = (0.05, 0.9, 0.01);
        let cfg = SgdConfig {
            learning_rate: lr,
            momentum: mu,
            weight_decay: wd,
        };
        let mut st = SgdState::new(&m);
        let g = filled_grads(&m);
        sgd_step(&mut m, &g, &cfg, &mut st).unwrap();
        sgd_step(&mut m, &g, &cfg, &mut st).unwrap();
        for ((got, t0), gb) in m.params().iter().zip(&theta0).zip(g.params()) {
            for ((&got, &t0), &gi) in got.iter().zip(t0).zip(gb) {
                // v1 = g + wd·θ0 ; θ1 = θ0 − lr·v1
                // v2 = μ·v1 + g + wd·θ1 ; θ2 = θ1 − lr·v2
                let v1 = gi + wd * t0;
                let t1 = t0 - lr * v1;
                let v2 = mu * v1 + gi + wd * t1;
                let t2 = t1 - lr * v2;
                assert!((got - t2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulator_steps_once_per_window_and_flushes_remainder() {
        let mut m = tiny();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut st = SgdState::new(&m);
        let mut acc = Accumulator::new(&m, Some(3));
        let mut stepped = 0;
        for _ in 0..7 {
            acc.grads.add_assign(&filled_grads(&m)).unwrap();
            if acc.commit(&mut m, &cfg, &mut st).unwrap() {
                stepped += 1;
            }
        }
        assert_eq!(stepped, 2);
        assert!(acc.flush(&mut m, &cfg, &mut st).unwrap());
        assert_eq!(acc.steps_taken, 3);

        let mut acc = Accumulator::new(&m, None);
        for _ in 0..5 {
            assert!(!acc.commit(&mut m, &cfg, &mut st).unwrap());
        }
        assert!(acc.flush(&mut m, &cfg, &mut st).unwrap());
        assert_eq!(acc.steps_taken, 1);
    }

    #[test]
    fn config_validation() {
        let bad = SgdConfig {
            learning_rate: 0.0,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        assert!(bad.validate().is_err());
        let bad = SgdConfig {
            learning_rate: 0.1,
            momentum: 1.0,
            weight_decay: 0.0,
        };
        assert!(bad.validate().is_err());
    }
}
