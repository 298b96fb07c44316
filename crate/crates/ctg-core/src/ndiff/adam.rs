use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters. The optimizer is unremarkable; defaults follow the
/// usual lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    cfg: AdamConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<F>]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        AdamState { cfg, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("{} params / {} grads for {} states", params.len(), grads.len(), self.m.len()),
            });
        }
        for ((p, g), (m, v)) in params.iter().zip(grads).zip(self.m.iter().zip(&self.v)) {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                });
            }
        }
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1).unwrap();
        let b2 = F::from_f64(self.cfg.beta2).unwrap();
        let lr = F::from_f64(self.cfg.lr).unwrap();
        let eps = F::from_f64(self.cfg.eps).unwrap();
        let corr1 = F::one() - b1.powi(self.t as i32);
        let corr2 = F::one() - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..p.len() {
                let gk = g.data()[k];
                let mk = b1 * m.data()[k] + (F::one() - b1) * gk;
                let vk = b2 * v.data()[k] + (F::one() - b2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / corr1;
                let v_hat = vk / corr2;
                p.data_mut()[k] = p.data()[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
