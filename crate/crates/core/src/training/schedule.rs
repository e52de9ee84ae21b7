use std::f64::consts::PI;

/// Number of warmup steps for a run of `total_steps`.
pub fn warmup_steps(total_steps: usize, warm_fraction: f64) -> usize {
    (warm_fraction * total_steps as f64).round() as usize
}

/// Linear warmup from 0 to `peak` over the first `warm_fraction` of the run,
/// then a single cosine decay reaching 0 at the last step.
pub fn lr_at(step: usize, total_steps: usize, peak: f64, warm_fraction: f64) -> f64 {
    let warm = warmup_steps(total_steps, warm_fraction);
    if step < warm {
        return peak * step as f64 / warm as f64;
    }
    let last = total_steps.saturating_sub(1);
    if last <= warm {
        return peak;
    }
    let progress = (step.min(last) - warm) as f64 / (last - warm) as f64;
    0.5 * peak * (1.0 + (PI * progress).cos())
}
