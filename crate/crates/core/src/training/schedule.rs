use std::f64::consts::PI;

pub const DEFAULT_WARMUP_FRAC: f64 = 0.3;

fn cos_anneal(start: f64, end: f64, frac: f64) -> f64 {
    // endpoints returned verbatim so they are exact
    if frac <= 0.0 {
        start
    } else if frac >= 1.0 {
        end
    } else {
        end + (start - end) * (1.0 + (PI * frac).cos()) / 2.0
    }
}

/// One-cycle learning rate with the default warmup fraction.
pub fn one_cycle_lr(step: usize, total: usize, peak: f64, div: f64, final_factor: f64) -> f64 {
    one_cycle_lr_with_warmup(step, total, peak, div, final_factor, DEFAULT_WARMUP_FRAC)
}

/// Cosine warmup from `peak / div` to `peak` over the first `warmup` share
/// of the steps, then cosine decay to `peak * final_factor` at
/// `step == total` (a factor of `1e-4` takes a peak of `1e-4` to `1e-8`).
pub fn one_cycle_lr_with_warmup(
    step: usize,
    total: usize,
    peak: f64,
    div: f64,
    final_factor: f64,
    warmup: f64,
) -> f64 {
    let start = peak / div;
    let end = peak * final_factor;
    if total == 0 {
        return start;
    }
    let step = step.min(total);
    let warm = ((warmup * total as f64).round() as usize).min(total);
    if step <= warm && warm > 0 {
        cos_anneal(start, peak, step as f64 / warm as f64)
    } else {
        cos_anneal(peak, end, (step - warm) as f64 / (total - warm) as f64)
    }
}
