//! Piecewise-linear schedules for the KL weight and the scheduled-sampling
//! ground-truth probability.

use super::config::{SamplingMode, TrainConfig};

// exact at both endpoints (t = 0 gives a, t = 1 gives b)
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a * (1.0 - t) + b * t
}

/// `start -> mid` over `[0, warmup]`, then `mid -> end` over
/// `[warmup, total]`, constant past `total`.
pub fn piecewise(start: f64, mid: f64, end: f64, warmup: usize, total: usize, step: usize) -> f64 {
    if step <= warmup {
        if warmup == 0 {
            return mid;
        }
        lerp(start, mid, step as f64 / warmup as f64)
    } else if step >= total {
        end
    } else {
        lerp(
            mid,
            end,
            (step - warmup) as f64 / (total - warmup) as f64,
        )
    }
}

/// KL weight at `step`: warm-up to `beta_mid`, cool-down to `beta_end`.
pub fn beta_schedule(cfg: &TrainConfig, step: usize) -> f64 {
    piecewise(
        cfg.beta_start,
        cfg.beta_mid,
        cfg.beta_end,
        cfg.warmup_steps,
        cfg.steps,
        step,
    )
}

/// `beta_max` at `step` for multiscale training: linear from start to end
/// over the warm-up period, constant afterwards.
pub fn beta_max_schedule(cfg: &TrainConfig, step: usize) -> f64 {
    piecewise(
        cfg.beta_max_start,
        cfg.beta_max_end,
        cfg.beta_max_end,
        cfg.warmup_steps,
        cfg.steps,
        step,
    )
}

/// Scheduled-sampling ground-truth probability: 1 -> 0 linearly over the
/// warm-up period, 0 afterwards.
pub fn ss_schedule(cfg: &TrainConfig, step: usize) -> f64 {
    piecewise(1.0, 0.0, 0.0, cfg.warmup_steps, cfg.steps, step)
}

/// Ground-truth probability for a module's sampling mode at `step`.
pub fn p_gt_for(mode: SamplingMode, cfg: &TrainConfig, step: usize) -> f64 {
    match mode {
        SamplingMode::TeacherForcing => 1.0,
        SamplingMode::AlwaysSampling => 0.0,
        SamplingMode::Scheduled => ss_schedule(cfg, step),
    }
}
