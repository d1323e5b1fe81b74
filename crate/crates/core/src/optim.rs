//! First-order optimisers over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Hyper<T> {
    pub fn with_lr(lr: T) -> Self {
        Hyper {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// SGD or Adam. One `step` updates every parameter group once; Adam keeps a
/// first/second moment buffer per group.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    hyper: Hyper<T>,
    moments: Vec<(Vec<T>, Vec<T>)>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, hyper: Hyper<T>) -> Result<Self> {
        if !(hyper.lr > T::zero()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", hyper.lr)));
        }
        Ok(Optimizer {
            kind,
            hyper,
            moments: Vec::new(),
            steps: 0,
        })
    }

    pub fn sgd(lr: T) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, Hyper::with_lr(lr))
    }

    pub fn adam(lr: T) -> Result<Self> {
        Self::new(OptimizerKind::Adam, Hyper::with_lr(lr))
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!("{} parameter groups but {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("group {i}: {} parameters, {} gradients", p.len(), g.len()),
                ));
            }
        }
        if self.kind == OptimizerKind::Adam {
            if self.moments.is_empty() {
                self.moments = params
                    .iter()
                    .map(|p| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
                    .collect();
            } else if self.moments.len() != params.len()
                || self.moments.iter().zip(params.iter()).any(|(m, p)| m.0.len() != p.len())
            {
                return Err(Error::shape("optimizer_step", "parameter groups changed between steps"));
            }
        }
        self.steps += 1;
        let Hyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, &d) in p.iter_mut().zip(g.iter()) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let bc1 = T::one() - beta1.powi(t);
                let bc2 = T::one() - beta2.powi(t);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
                    for i in 0..p.len() {
                        let d = g[i];
                        m[i] = beta1 * m[i] + (T::one() - beta1) * d;
                        v[i] = beta2 * v[i] + (T::one() - beta2) * d * d;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
