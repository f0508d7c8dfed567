use serde::{Deserialize, Serialize};

use super::model::ModelGraph;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one model, matched to its parameter list by position.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step_count: u64,
}

impl Adam {
    pub fn new(model: &ModelGraph, config: AdamConfig) -> Self {
        let shapes: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, m: shapes.clone(), v: shapes, step_count: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update from the gradients accumulated in `model`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, model: &mut ModelGraph) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match model".into()));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.grad.shape() != m.shape() {
                return Err(Error::Shape(format!("optimizer state shape mismatch for {}", p.name)));
            }
            if !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data().to_vec();
            let (md, vd, w) = (m.data_mut(), v.data_mut(), p.value.data_mut());
            for i in 0..g.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * g[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * g[i] * g[i];
                w[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
