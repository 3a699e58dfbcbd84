//! First-order optimizers over a fixed set of parameter slots.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd_momentum(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    /// Adam with β₁ = 0.9, β₂ = 0.999 and ε = 1e-7.
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::SgdMomentum { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::InvalidConfig(format!("momentum {momentum} must lie in [0, 1)")));
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::InvalidConfig(format!("Adam betas ({beta1}, {beta2}) must lie in [0, 1)")));
                }
                if !(eps > 0.0) {
                    return Err(Error::InvalidConfig(format!("Adam epsilon {eps} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer state for a list of parameter slots of fixed sizes.
///
/// Call [`Optimizer::begin_step`] once per step, then [`Optimizer::update`]
/// for every slot.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, slot_sizes: &[usize]) -> Result<Self> {
        kind.validate()?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {lr} must be positive")));
        }
        let zeros = || slot_sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Ok(Optimizer {
            kind,
            lr,
            step: 0,
            first: zeros(),
            second,
        })
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), grad.len());
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                let velocity = &mut self.first[slot];
                for ((w, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = momentum * *v - self.lr * g;
                    *w += *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step.max(1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let m = &mut self.first[slot];
                let v = &mut self.second[slot];
                for (((w, mi), vi), &g) in param.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad) {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}
