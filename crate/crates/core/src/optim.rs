//! Adaptive-moment optimizer.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::nn::ParamStore;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    steps: BTreeMap<String, u64>,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            steps: BTreeMap::new(),
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Names that have received at least one update.
    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.steps.keys().map(String::as_str)
    }

    /// Applies one update to every parameter present in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        for (name, g) in grads {
            let Some(p) = store.get_mut(name) else {
                continue;
            };
            let t = self.steps.entry(name.clone()).or_insert(0);
            *t += 1;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let bc1 = 1.0 - libm::pow(beta1, *t as f64);
            let bc2 = 1.0 - libm::pow(beta2, *t as f64);
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= learning_rate * mhat / (libm::sqrt(vhat) + eps);
            }
        }
    }
}
