use std::f64::consts::PI;

use super::config::TrainConfig;

pub fn warmup_steps(cfg: &TrainConfig, total_steps: usize) -> usize {
    (cfg.warmup_fraction * total_steps as f64).floor() as usize
}

/// Linear warmup to `lr`, then cosine decay to zero at `total_steps`.
pub fn lr_at_step(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let warm = warmup_steps(cfg, total_steps);
    if step < warm {
        return cfg.lr * step as f64 / warm as f64;
    }
    if total_steps <= warm {
        return cfg.lr;
    }
    let progress = ((step - warm) as f64 / (total_steps - warm) as f64).min(1.0);
    cfg.lr * 0.5 * (1.0 + (PI * progress).cos())
}
