//! Learning-rate and prediction-horizon schedules.

/// Cosine annealing from `lr0` at step 0 to `floor` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, floor: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let s = step.min(total) as f64 / total as f64;
    floor + 0.5 * (lr0 - floor) * (1.0 + (std::f64::consts::PI * s).cos())
}

/// Training horizon for `epoch`: grows linearly from `⌈γ₀T⌉` at epoch 0 to
/// `T` at epoch `⌈end_fraction · total_epochs⌉ − 1`, then stays at `T`.
pub fn curriculum_horizon(
    epoch: usize,
    total_epochs: usize,
    gamma0: f64,
    horizon: usize,
    end_fraction: f64,
) -> usize {
    let t = horizon.max(1);
    let start = ((gamma0 * t as f64).ceil() as usize).clamp(1, t);
    let end = (end_fraction * total_epochs as f64).ceil() as usize;
    if epoch + 1 >= end {
        return t;
    }
    let grown = start as f64 + (t - start) as f64 * epoch as f64 / (end - 1) as f64;
    (grown.floor() as usize).clamp(start, t)
}
