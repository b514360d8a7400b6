use serde::{Deserialize, Serialize};

use super::tensor::{Param, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Nesterov-accelerated Adam with a constant momentum schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Nadam<T> {
    pub config: NadamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Nadam<T> {
    pub fn new(config: NadamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update from the accumulated gradients. Nothing changes when any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if params.iter().any(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient);
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        let shapes_ok = self.m.len() == params.len() && params.iter().zip(&self.m).all(|(p, m)| p.value.len() == m.len());
        if !shapes_ok {
            return Err(Error::ShapeMismatch("optimizer state does not match the parameters".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let m_corr = T::of(1.0 / (1.0 - c.beta1.powi(t + 1)));
        let g_corr = T::of(1.0 / (1.0 - c.beta1.powi(t)));
        let v_corr = T::of(1.0 / (1.0 - c.beta2.powi(t)));
        let (b1, b2, lr, eps) = (T::of(c.beta1), T::of(c.beta2), T::of(c.lr), T::of(c.eps));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] * m_corr;
                let g_hat = g * g_corr;
                let v_hat = v[i] * v_corr;
                p.value[i] -= lr * (b1 * m_hat + one_b1 * g_hat) / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
