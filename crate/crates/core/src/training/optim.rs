use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::loss::sign;
use super::LossConfig;
use crate::network::ModelParams;

/// How the L1 term enters the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    /// `gamma * sign(w)` is added to the gradient Adam sees.
    #[default]
    Coupled,
    /// `gamma * sign(w)` is applied next to the decoupled weight decay.
    Decoupled,
}

/// Adam with decoupled weight decay. The L2 term of the objective becomes
/// the decay, the L1 term a subgradient step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update from data-loss gradients `grads`.
    pub fn step(
        &mut self,
        params: &mut ModelParams<f64>,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
        reg: &LossConfig,
        l1: L1Mode,
    ) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (gamma, delta) = (reg.gamma, reg.delta);
        for (name, w) in params.arrays.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.clone()).or_insert_with(|| Array2::zeros(w.dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Array2::zeros(w.dim()));
            Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
                let s = sign(*w);
                let g = match l1 {
                    L1Mode::Coupled => g + gamma * s,
                    L1Mode::Decoupled => g,
                };
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let adam = (*m / c1) / ((*v / c2).sqrt() + eps);
                let decay = match l1 {
                    L1Mode::Coupled => delta * *w,
                    L1Mode::Decoupled => delta * *w + gamma * s,
                };
                *w -= lr * (adam + decay);
            });
        }
    }
}
