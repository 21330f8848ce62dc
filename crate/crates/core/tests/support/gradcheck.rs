//! Central finite differences of the full objective, regularizer included.
#![allow(dead_code)]

use grid_core::graph::Subtask;
use grid_core::network::{forward_inputs, Inputs, ModelConfig, ModelParams};
use grid_core::training::{loss, loss_and_grads, LossConfig};

/// Denominator floor of the relative error. Below it the comparison is
/// effectively absolute, which keeps entries whose true gradient is zero
/// (padded action-head rows, untouched biases) from dividing noise by noise.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn check(params: &ModelParams<f64>, cfg: &ModelConfig, inp: &Inputs<f64>, gt: Subtask, lc: &LossConfig, eps: f64) -> GradReport {
    let (_, grads) = loss_and_grads(params, cfg, inp, gt, lc).unwrap();
    let total = |p: &ModelParams<f64>| {
        let out = forward_inputs(p, cfg, inp).unwrap();
        loss(&out, gt, p, lc).unwrap().total
    };
    let mut p = params.clone();
    let mut report = GradReport { max_rel: 0.0, worst: String::new(), checked: 0 };
    let mut worst_at = None;
    for (name, g) in &grads {
        for (idx, &analytic) in g.indexed_iter() {
            let w = params.get(name)[idx];
            p.get_mut(name)[idx] = w + eps;
            let up = total(&p);
            p.get_mut(name)[idx] = w - eps;
            let down = total(&p);
            p.get_mut(name)[idx] = w;
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{name}{idx:?}: analytic {analytic:.6e} numeric {numeric:.6e}");
                worst_at = Some((name.clone(), idx));
            }
        }
    }
    // Diagnostic only: a much smaller step tells a kink inside the stencil
    // apart from a wrong backward pass. It does not enter max_rel.
    if let Some((name, idx)) = worst_at {
        let fine = 1e-7;
        let w = params.get(&name)[idx];
        p.get_mut(&name)[idx] = w + fine;
        let up = total(&p);
        p.get_mut(&name)[idx] = w - fine;
        let down = total(&p);
        report.worst.push_str(&format!(" (numeric at eps {fine:e}: {:.6e})", (up - down) / (2.0 * fine)));
    }
    report
}
