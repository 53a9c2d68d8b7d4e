//! Moving mean and covariance of the sampled latent vectors, used to
//! draw generation-time latents from `N(mu, Sigma)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentMomentTracker {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `dim x dim` covariance.
    pub cov: Vec<f64>,
    pub decay: f64,
    pub updates: usize,
}

impl LatentMomentTracker {
    pub fn new(dim: usize, decay: f64) -> LatentMomentTracker {
        LatentMomentTracker {
            dim,
            mean: vec![0.0; dim],
            cov: identity(dim),
            decay,
            updates: 0,
        }
    }

    /// Batch update with sampled latent vectors; the first update adopts
    /// the batch statistics, later ones blend with the decay.
    pub fn update_batch(&mut self, zs: &[Vec<f64>]) -> Result<()> {
        if zs.len() < 2 {
            return Err(Error::BatchTooSmall(zs.len()));
        }
        let d = self.dim;
        let n = zs.len() as f64;
        let mut mean_b = vec![0.0; d];
        for z in zs {
            for (m, v) in mean_b.iter_mut().zip(z) {
                *m += v;
            }
        }
        for m in &mut mean_b {
            *m /= n;
        }
        let mut cov_b = vec![0.0; d * d];
        for z in zs {
            for i in 0..d {
                let di = z[i] - mean_b[i];
                let row = &mut cov_b[i * d..(i + 1) * d];
                for (j, c) in row.iter_mut().enumerate() {
                    *c += di * (z[j] - mean_b[j]);
                }
            }
        }
        for c in &mut cov_b {
            *c /= n - 1.0;
        }

        if self.updates == 0 {
            self.mean = mean_b;
            self.cov = cov_b;
        } else {
            let a = self.decay;
            for (m, b) in self.mean.iter_mut().zip(&mean_b) {
                *m = a * *m + (1.0 - a) * b;
            }
            for (c, b) in self.cov.iter_mut().zip(&cov_b) {
                *c = a * *c + (1.0 - a) * b;
            }
        }
        self.updates += 1;
        Ok(())
    }

    /// Sampler over the tracked Gaussian. With no updates yet, this is
    /// the unit Gaussian prior.
    pub fn sampler(&self) -> Result<TrackerSampler> {
        let chol = if self.updates == 0 {
            identity(self.dim)
        } else {
            cholesky_with_jitter(&self.cov, self.dim)?
        };
        Ok(TrackerSampler {
            mean: self.mean.clone(),
            chol,
            dim: self.dim,
        })
    }
}

/// Frozen `(mu, chol(Sigma))` pair for drawing latents.
pub struct TrackerSampler {
    mean: Vec<f64>,
    chol: Vec<f64>,
    dim: usize,
}

impl TrackerSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let eps: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut z = self.mean.clone();
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            let mut acc = 0.0;
            for (l, e) in row.iter().zip(&eps) {
                acc += l * e;
            }
            z[i] += acc;
        }
        z
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Lower-triangular Cholesky factor of `cov + jitter * I`, escalating the
/// jitter by 10x up to three times. The initial jitter is
/// `1e-6 * trace / dim`.
pub fn cholesky_with_jitter(cov: &[f64], d: usize) -> Result<Vec<f64>> {
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let mut jitter = 1e-6 * trace.max(f64::MIN_POSITIVE) / d as f64;
    for _ in 0..=3 {
        if let Some(l) = try_cholesky(cov, d, jitter) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(Error::CholeskyFailed)
}

fn try_cholesky(cov: &[f64], d: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = cov[i * d + j];
            if i == j {
                sum += jitter;
            }
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}
