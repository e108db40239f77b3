//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradStore, Mat, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 3e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.001, clip_norm: Some(1.0) }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> AdamW {
        let zeros = || store.params().iter().map(|p| Mat::zeros(p.value.raw_dim())).collect();
        AdamW { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.cfg.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c = self.cfg;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let g = &grads.grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            if p.decay && c.weight_decay > 0.0 {
                let keep = 1.0 - c.lr * c.weight_decay;
                p.value.mapv_inplace(|x| x * keep);
            }
            ndarray::Zip::from(&mut p.value).and(m).and(v).and(g).for_each(|x, m, v, &g| {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *x -= c.lr * (*m / bias1) / ((*v / bias2).sqrt() + c.eps);
            });
        }
        norm
    }
}
