//! Adaptive first-order optimizers over lists of dense tensors.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Nesterov-momentum adaptive method with a gradient-difference term.
    Adan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    /// Second-moment decay for Adan; unused by Adam.
    pub beta3: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl OptimizerConfig {
    pub fn adan() -> Self {
        Self {
            kind: OptimizerKind::Adan,
            beta1: 0.98,
            beta2: 0.92,
            beta3: 0.99,
            eps: 1e-8,
            weight_decay: 0.02,
            max_grad_norm: 0.0,
        }
    }

    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 0.0,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let betas = [self.beta1, self.beta2, self.beta3];
        if betas.iter().any(|b| !(0.0..1.0).contains(b)) || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "optimizer settings out of range: {self:?}"
            )));
        }
        if self.weight_decay < 0.0 || self.max_grad_norm < 0.0 {
            return Err(Error::Config(
                "weight decay and clip norm must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adan()
    }
}

/// Per-tensor moment buffers, created lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    diff: Vec<Array2<f64>>,
    prev_grad: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
            diff: Vec::new(),
            prev_grad: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. `params` and `grads` must line up tensor by tensor.
    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[&Array2<f64>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient lists differ");
        if self.first.is_empty() {
            let zeros = |g: &&Array2<f64>| Array2::zeros(g.raw_dim());
            self.first = grads.iter().map(zeros).collect();
            self.second = grads.iter().map(zeros).collect();
            self.diff = grads.iter().map(zeros).collect();
            self.prev_grad = grads.iter().map(|g| (*g).clone()).collect();
        }
        self.step += 1;
        let clip = self.clip_factor(grads);
        let c = self.config;
        let k = self.step as i32;
        let (bc1, bc2, bc3) = (
            1.0 - c.beta1.powi(k),
            1.0 - c.beta2.powi(k),
            1.0 - c.beta3.powi(k),
        );
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if c.weight_decay > 0.0 {
                *p *= 1.0 - lr * c.weight_decay;
            }
            match c.kind {
                OptimizerKind::Adam => {
                    Zip::from(p)
                        .and(*g)
                        .and(&mut self.first[i])
                        .and(&mut self.second[i])
                        .for_each(|p, &g, m, v| {
                            let g = g * clip;
                            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                        });
                }
                OptimizerKind::Adan => {
                    Zip::from(p)
                        .and(*g)
                        .and(&mut self.prev_grad[i])
                        .and(&mut self.first[i])
                        .and(&mut self.diff[i])
                        .and(&mut self.second[i])
                        .for_each(|p, &g, prev, m, d, n| {
                            let g = g * clip;
                            let delta = g - *prev;
                            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                            *d = c.beta2 * *d + (1.0 - c.beta2) * delta;
                            let u = g + c.beta2 * delta;
                            *n = c.beta3 * *n + (1.0 - c.beta3) * u * u;
                            let update = *m / bc1 + c.beta2 * *d / bc2;
                            *p -= lr * update / ((*n / bc3).sqrt() + c.eps);
                            *prev = g;
                        });
                }
            }
        }
    }

    fn clip_factor(&self, grads: &[&Array2<f64>]) -> f64 {
        if self.config.max_grad_norm <= 0.0 {
            return 1.0;
        }
        let norm = grads
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > self.config.max_grad_norm {
            self.config.max_grad_norm / norm
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn minimise(config: OptimizerConfig, lr: f64, steps: usize) -> Array2<f64> {
        let target = array![[1.0, -2.0, 0.5]];
        let mut x = Array2::zeros((1, 3));
        let mut opt = Optimizer::new(config);
        for _ in 0..steps {
            let g = &x - &target;
            opt.step(vec![&mut x], &[&g], lr);
        }
        &x - &target
    }

    #[test]
    fn adam_and_adan_converge_on_a_quadratic() {
        for cfg in [
            OptimizerConfig::adam(),
            OptimizerConfig {
                weight_decay: 0.0,
                ..OptimizerConfig::adan()
            },
        ] {
            let err = minimise(cfg, 0.05, 2000);
            assert!(err.iter().all(|e| e.abs() < 1e-2), "{:?}: {err}", cfg.kind);
        }
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut x = array![[0.0, 0.0]];
        let g = array![[3.0, -0.2]];
        let mut opt = Optimizer::new(OptimizerConfig::adam());
        opt.step(vec![&mut x], &[&g], 0.1);
        approx::assert_abs_diff_eq!(x[[0, 0]], -0.1, epsilon = 1e-6);
        approx::assert_abs_diff_eq!(x[[0, 1]], 0.1, epsilon = 1e-6);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut x = array![[0.0]];
        let g = array![[100.0]];
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Adam,
            max_grad_norm: 1.0,
            ..OptimizerConfig::adam()
        };
        let mut opt = Optimizer::new(cfg);
        assert_eq!(opt.clip_factor(&[&g]), 0.01);
        opt.step(vec![&mut x], &[&g], 0.1);
        assert!(x[[0, 0]] < 0.0);
    }
}
