//! Plain gradient descent with momentum and global gradient-norm clipping.

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            clip_norm: 5.0,
        }
    }
}

use crate::numerics::Tensor;

pub struct Sgd {
    pub cfg: SgdConfig,
    params: Vec<Tensor>,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig, params: Vec<Tensor>) -> Self {
        let velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Sgd {
            cfg,
            params,
            velocity,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Apply one update from the accumulated gradients, then clear them.
    /// Returns the pre-clip global gradient norm.
    pub fn step(&mut self) -> f64 {
        let mut sq = 0.0;
        let grads: Vec<Option<Vec<f64>>> = self.params.iter().map(|p| p.grad()).collect();
        for g in grads.iter().flatten() {
            for v in g {
                sq += v * v;
            }
        }
        let norm = sq.sqrt();
        let scale = if norm > self.cfg.clip_norm && norm > 0.0 {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        for ((p, vel), g) in self.params.iter().zip(&mut self.velocity).zip(&grads) {
            let Some(g) = g else { continue };
            let mut vals = p.to_vec();
            for i in 0..vals.len() {
                vel[i] = self.cfg.momentum * vel[i] + scale * g[i];
                vals[i] -= self.cfg.lr * vel[i];
            }
            p.set_values(&vals);
            p.zero_grad();
        }
        norm
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
