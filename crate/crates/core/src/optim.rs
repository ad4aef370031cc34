//! First-order parameter updates: plain SGD, SGD with momentum, and Adam.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: default_momentum(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate)
        }
    }

    pub fn sgd_momentum(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            ..Self::adam(learning_rate)
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// An optimizer bound to one parameter group. State is created lazily on
/// the first update and must keep matching the group's shapes afterwards.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates `params` in place from `grads` (same order, same shapes).
    pub fn apply_gradients(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g.as_ref().ok_or(Error::MissingGradient(i))?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "apply_gradients",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(s, p)| s.len() != p.numel())
        {
            return Err(Error::invalid("parameter group changed shape since the last step"));
        }

        self.steps += 1;
        let c = &self.config;
        let lr = c.learning_rate;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g.as_ref().expect("checked above").data();
            let w = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= lr * gi;
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let v = &mut self.first[i];
                    for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = c.momentum * *vi + gi;
                        *wi -= lr * *vi;
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.first[i];
                    let v = &mut self.second[i];
                    for k in 0..w.len() {
                        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                        let m_hat = m[k] / bias1;
                        let v_hat = v[k] / bias2;
                        w[k] -= lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut w = Tensor::scalar(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1));
        opt.apply_gradients(&mut [&mut w], &[Some(Tensor::scalar(2.0))]).unwrap();
        assert!((w.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop_for_sgd() {
        let mut w = Tensor::vector(vec![0.3, -4.0]);
        let before = w.clone();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.5));
        opt.apply_gradients(&mut [&mut w], &[Some(Tensor::zeros(&[2]))]).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let lr = 1e-3;
        let mut w = Tensor::vector(vec![1e-6, 5.0, -300.0]);
        let before = w.clone();
        let mut opt = Optimizer::new(OptimizerConfig::adam(lr));
        opt.apply_gradients(&mut [&mut w], &[Some(Tensor::ones(&[3]))]).unwrap();
        for (a, b) in w.data().iter().zip(before.data()) {
            // m_hat = v_hat = 1, so the step is lr / (1 + eps)
            assert!((b - a - lr).abs() < 1e-10);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut w = Tensor::scalar(0.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd_momentum(1.0, 0.5));
        for _ in 0..2 {
            opt.apply_gradients(&mut [&mut w], &[Some(Tensor::scalar(1.0))]).unwrap();
        }
        // velocities 1 then 1.5
        assert_eq!(w.data()[0], -2.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut a = Tensor::scalar(0.0);
        let mut b = Tensor::scalar(0.0);
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let err = opt
            .apply_gradients(&mut [&mut a, &mut b], &[Some(Tensor::scalar(1.0)), None])
            .unwrap_err();
        assert!(matches!(err, Error::MissingGradient(1)));
        assert_eq!(opt.steps(), 0);
    }
}
