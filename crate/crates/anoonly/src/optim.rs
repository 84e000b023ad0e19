//! Flat-vector optimizers for the hand-written network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerSpec::Sgd { lr, .. } | OptimizerSpec::Adam { lr, .. } => *lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr() <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        match self {
            OptimizerSpec::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(momentum) {
                    return Err(Error::config("sgd momentum must be in [0,1)"));
                }
            }
            OptimizerSpec::Adam { beta1, beta2, eps, .. } => {
                if !(0.0..1.0).contains(beta1) || !(0.0..1.0).contains(beta2) || *eps <= 0.0 {
                    return Err(Error::config("adam betas must be in [0,1) and eps > 0"));
                }
            }
        }
        Ok(())
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::adam(1e-3)
    }
}

#[derive(Debug, Clone)]
enum State {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    state: State,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        let state = match spec {
            OptimizerSpec::Sgd { .. } => State::Sgd {
                velocity: vec![0.0; dim],
            },
            OptimizerSpec::Adam { .. } => State::Adam {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                t: 0,
            },
        };
        Ok(Optimizer { spec, state })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step_scaled(params, grads, 1.0);
    }

    /// One update with the learning rate multiplied by `lr_scale`, for
    /// schedules driven by the training loop.
    pub fn step_scaled(&mut self, params: &mut [f64], grads: &[f64], lr_scale: f64) {
        debug_assert_eq!(params.len(), grads.len());
        match (&self.spec, &mut self.state) {
            (OptimizerSpec::Sgd { lr, momentum }, State::Sgd { velocity }) => {
                let lr = lr * lr_scale;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            (
                OptimizerSpec::Adam { lr, beta1, beta2, eps },
                State::Adam { m, v, t },
            ) => {
                let lr = lr * lr_scale;
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            _ => unreachable!("state matches spec by construction"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut opt = Optimizer::new(
            OptimizerSpec::Sgd { lr: 0.1, momentum: 0.0 },
            2,
        )
        .unwrap();
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[0.5, -1.0]);
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert!((p[1] - -1.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut opt = Optimizer::new(
            OptimizerSpec::Sgd { lr: 1.0, momentum: 0.5 },
            1,
        )
        .unwrap();
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]); // v=1,    p=-1
        opt.step(&mut p, &[1.0]); // v=1.5,  p=-2.5
        assert!((p[0] + 2.5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the very first Adam step is ~lr in the
        // gradient's direction regardless of magnitude.
        let mut opt = Optimizer::new(OptimizerSpec::adam(0.01), 2).unwrap();
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[1000.0, -3.0]);
        assert!((p[0] + 0.01).abs() < 1e-6);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(OptimizerSpec::Sgd { lr: 0.0, momentum: 0.0 }.validate().is_err());
        assert!(OptimizerSpec::Sgd { lr: 0.1, momentum: 1.0 }.validate().is_err());
        assert!(OptimizerSpec::Adam { lr: 0.1, beta1: 1.0, beta2: 0.9, eps: 1e-8 }
            .validate()
            .is_err());
    }
}
