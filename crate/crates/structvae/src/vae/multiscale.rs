//! Multiscale training: one standard-deviation network and objective per
//! KL-weight level, batches assigned round-robin so a batch always trains
//! a single level.

use rand::Rng;

use super::config::{MultiscaleSpec, PSpacing, TrainConfig};
use crate::diff::ParameterStore;
use crate::error::Result;
use crate::nn::{build_stddev, StdDevNetwork};

/// Objective family shared by all levels of a bank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectiveKind {
    /// `recon + beta_i * KL/d`.
    Standard,
    /// `recon / beta_i + KL/d`.
    Inverted,
    /// `recon + gamma * max(KL/d - C_i/d, 0)`.
    Capacity { gamma: f64 },
}

/// One KL-weight level.
pub struct Level {
    /// Multiplier on the scheduled `beta_max` (1.0 when multiscale is
    /// off; the single level then follows the plain beta schedule).
    pub beta_factor: f64,
    /// Capacity budget in total nats, capacity mode only.
    pub capacity: Option<f64>,
    /// Pool re-initialization probability for this level.
    pub p_sampled: f64,
    pub stddev: StdDevNetwork,
}

/// All levels plus the shared objective family.
pub struct MultiscaleBank {
    pub levels: Vec<Level>,
    pub objective: ObjectiveKind,
}

impl MultiscaleBank {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Effective beta of a level given the scheduled `beta_max`.
    pub fn beta(&self, level: usize, beta_max: f64) -> f64 {
        self.levels[level].beta_factor * beta_max
    }
}

/// Builds the level bank for `cfg`, registering one fresh
/// standard-deviation network per level.
pub fn multiscale_assign<R: Rng>(
    cfg: &TrainConfig,
    latent_dim: usize,
    store: &mut ParameterStore,
    rng: &mut R,
) -> Result<MultiscaleBank> {
    let n = cfg.n_levels();
    let objective = match cfg.multiscale {
        MultiscaleSpec::Inverted { .. } => ObjectiveKind::Inverted,
        MultiscaleSpec::Capacity { gamma, .. } => ObjectiveKind::Capacity { gamma },
        _ => ObjectiveKind::Standard,
    };
    let mut levels = Vec::with_capacity(n);
    for i in 0..n {
        let beta_factor = match cfg.multiscale {
            MultiscaleSpec::Off => 1.0,
            MultiscaleSpec::Linear | MultiscaleSpec::Capacity { .. } => {
                (i + 1) as f64 / n as f64
            }
            MultiscaleSpec::Geometric { r } | MultiscaleSpec::Inverted { r } => {
                r.powi((n - 1 - i) as i32)
            }
        };
        let capacity = match cfg.multiscale {
            MultiscaleSpec::Capacity {
                c_min, c_increment, ..
            } => Some(c_min + i as f64 * c_increment),
            _ => None,
        };
        let p_sampled = match cfg.p_spacing {
            PSpacing::Constant => cfg.p_sampled,
            PSpacing::Linear { p_min, p_max } => {
                p_min + (i + 1) as f64 * (p_max - p_min) / n as f64
            }
            PSpacing::Geometric { p_min, p_max } => {
                p_max * (p_min / p_max).powf((n - 1 - i) as f64 / n as f64)
            }
        };
        levels.push(Level {
            beta_factor,
            capacity,
            p_sampled,
            stddev: build_stddev(store, i, latent_dim, rng)?,
        });
    }
    Ok(MultiscaleBank { levels, objective })
}
