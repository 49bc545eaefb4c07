//! Adam with optional global gradient-norm clipping.

use std::collections::BTreeMap;

use super::autograd::{ParamGrads, Tensor};
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    t: i32,
    m: BTreeMap<ParamId, Tensor>,
    v: BTreeMap<ParamId, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Global L2 norm over every gradient tensor.
    pub fn grad_norm(grads: &ParamGrads) -> f64 {
        grads.values().flat_map(|g| g.data.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.t += 1;
        let scale = match self.clip_norm {
            Some(c) => {
                let n = Self::grad_norm(grads);
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut ids: Vec<&ParamId> = grads.keys().collect();
        ids.sort();
        for id in ids {
            let g = &grads[id];
            let p = store.get_mut(*id);
            let m = self.m.entry(*id).or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self.v.entry(*id).or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            for i in 0..g.data.len() {
                let gi = g.data[i] * scale;
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
