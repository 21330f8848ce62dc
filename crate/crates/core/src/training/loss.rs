use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::graph::{NodeId, Subtask};
use crate::network::{register_params, trace_forward, ForwardOutput, Inputs, ModelConfig, ModelParams, TracedOutput};
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the action cross-entropy.
    pub alpha: f64,
    /// Weight of the object cross-entropy.
    pub beta: f64,
    /// L1 strength.
    pub gamma: f64,
    /// L2 strength; the penalty is `delta / 2 * sum w^2`.
    pub delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 25.0,
            gamma: 0.2,
            delta: 0.8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::Config(format!("loss weight {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `act` and `obj` are the unweighted cross-entropies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossValue {
    pub total: f64,
    pub act: f64,
    pub obj: f64,
    pub reg: f64,
}

pub fn cross_entropy<T: Real>(logits: &Array1<T>, target: usize) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
    let lse = logits.iter().map(|x| (x.as_f64() - m).exp()).sum::<f64>().ln() + m;
    lse - logits[target].as_f64()
}

/// `gamma * sum|w| + delta / 2 * sum w^2` over every parameter.
pub fn regularization<T: Real>(params: &ModelParams<T>, cfg: &LossConfig) -> f64 {
    let (mut l1, mut l2) = (0.0, 0.0);
    for a in params.arrays.values() {
        for &w in a.iter() {
            let w = w.as_f64();
            l1 += w.abs();
            l2 += w * w;
        }
    }
    cfg.gamma * l1 + 0.5 * cfg.delta * l2
}

/// Row of `id` among the scene rows.
pub fn object_row(scene_ids: &[NodeId], id: NodeId) -> Result<usize, TrainError> {
    scene_ids
        .binary_search(&id)
        .map_err(|_| TrainError::IndexOutOfRange { object_id: id })
}

/// Full objective for one prediction.
pub fn loss<T: Real>(
    out: &ForwardOutput<T>,
    gt: Subtask,
    params: &ModelParams<T>,
    cfg: &LossConfig,
) -> Result<LossValue, TrainError> {
    let row = object_row(&out.scene_ids, gt.object_id)?;
    let act = cross_entropy(&out.action_logits, gt.action.index());
    let obj = cross_entropy(&out.object_logits, row);
    let reg = regularization(params, cfg);
    Ok(LossValue {
        total: cfg.alpha * act + cfg.beta * obj + reg,
        act,
        obj,
        reg,
    })
}

/// Weighted data loss recorded on the tape; returns `(total, ce_act, ce_obj)`.
pub fn data_loss_on_tape<T: Real>(
    tape: &Tape<T>,
    out: TracedOutput,
    action: usize,
    object_row: usize,
    cfg: &LossConfig,
) -> (Var, Var, Var) {
    let ce_a = tape.cross_entropy(out.action, action);
    let ce_o = tape.cross_entropy(out.object, object_row);
    let total = tape.weighted_sum(&[(ce_a, T::lit(cfg.alpha)), (ce_o, T::lit(cfg.beta))]);
    (total, ce_a, ce_o)
}

/// Objective and its gradient with respect to every parameter, regularizer
/// included (subgradient of `|w|` taken as 0 at 0).
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    model_cfg: &ModelConfig,
    inputs: &Inputs<T>,
    gt: Subtask,
    cfg: &LossConfig,
) -> Result<(LossValue, BTreeMap<String, Array2<T>>), TrainError> {
    let row = object_row(&inputs.scene_ids, gt.object_id)?;
    let tape = Tape::new();
    let vars = register_params(&tape, params);
    let out = trace_forward(&tape, &vars, model_cfg, inputs, None)?;
    let (total, ce_a, ce_o) = data_loss_on_tape(&tape, out, gt.action.index(), row, cfg);
    let mut grads = tape.backward(total);
    let gamma = T::lit(cfg.gamma);
    let delta = T::lit(cfg.delta);
    let mut out_grads = BTreeMap::new();
    for (name, var) in &vars {
        let w = params.get(name);
        let mut g = grads.take(*var).unwrap_or_else(|| Array2::zeros(w.dim()));
        g.zip_mut_with(w, |g, &w| *g += gamma * sign(w) + delta * w);
        out_grads.insert(name.clone(), g);
    }
    let reg = regularization(params, cfg);
    let (act, obj) = (tape.scalar(ce_a).as_f64(), tape.scalar(ce_o).as_f64());
    Ok((
        LossValue {
            total: tape.scalar(total).as_f64() + reg,
            act,
            obj,
            reg,
        },
        out_grads,
    ))
}

pub(crate) fn sign<T: Real>(w: T) -> T {
    if w > T::zero() {
        T::one()
    } else if w < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Action;
    use ndarray::array;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d: 8,
            heads: 2,
            l_gat: 1,
            l_enh: 1,
            l_encdec: 1,
            k_robot: 2,
            ff_dim: 8,
            head_hidden: 4,
            ..Default::default()
        }
    }

    #[test]
    fn perfect_prediction_with_zero_params_is_free() {
        let p = ModelParams::<f64>::zeros(&tiny());
        let mut a = Array1::zeros(8);
        a[2] = 1000.0;
        let out = ForwardOutput {
            action_logits: a,
            object_logits: array![0.0, 1000.0],
            scene_ids: vec![0, 4],
        };
        let l = loss(&out, Subtask::new(Action::PlaceTo, 4), &p, &LossConfig::default()).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn single_weight_regularizer() {
        let mut p = ModelParams::<f64>::zeros(&tiny());
        p.get_mut("head.obj.b2")[[0, 0]] = 2.0;
        assert!((regularization(&p, &LossConfig::default()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_object_is_rejected() {
        let p = ModelParams::<f64>::zeros(&tiny());
        let out = ForwardOutput {
            action_logits: Array1::zeros(8),
            object_logits: array![0.0],
            scene_ids: vec![0],
        };
        let err = loss(&out, Subtask::new(Action::Move, 3), &p, &LossConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::IndexOutOfRange { object_id: 3 }));
    }

    #[test]
    fn weights_must_be_positive() {
        let cfg = LossConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        LossConfig::default().validate().unwrap();
    }
}
