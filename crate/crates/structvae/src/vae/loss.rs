//! The variational objective: KL divergence, reparameterization, the
//! per-level objectives, and the shared batch forward/backward pass used
//! by both training and evaluation (generated loss runs the identical
//! code path with updates disabled).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::multiscale::ObjectiveKind;
use crate::diff::{Gradients, NodeId, ParameterStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{RecordModel, Sample, StdDevNetwork};

/// KL divergence between a diagonal Gaussian and the unit Gaussian, as a
/// tape node: `0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)`.
pub fn kl_diag_gaussian(tape: &mut Tape, mu: NodeId, sigma: NodeId) -> Result<NodeId> {
    tape.kl_diag(mu, sigma)
}

/// Value-level KL for reporting and tests.
pub fn kl_diag_value(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if let Some((i, &v)) = sigma.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::NonPositiveSigma { index: i, value: v });
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum())
}

/// `z = mu + sigma ⊙ eps` with `eps` drawn from the unit Gaussian.
pub fn reparameterize<R: Rng>(
    tape: &mut Tape,
    mu: NodeId,
    sigma: NodeId,
    rng: &mut R,
) -> Result<NodeId> {
    let d = tape.value(mu).len();
    let eps: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let eps = tape.constant(Tensor::vector(eps));
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// The per-level objective applied to `(recon_avg, kl)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LevelObjective {
    /// `recon + beta * KL/d`.
    Standard { beta: f64 },
    /// `recon / beta + KL/d`.
    Inverted { beta: f64 },
    /// `recon + gamma * max(KL/d - c/d, 0)` with `c` in total nats.
    Capacity { c: f64, gamma: f64 },
}

impl LevelObjective {
    pub fn from_kind(kind: ObjectiveKind, beta: f64, capacity: Option<f64>) -> LevelObjective {
        match kind {
            ObjectiveKind::Standard => LevelObjective::Standard { beta },
            ObjectiveKind::Inverted => LevelObjective::Inverted { beta },
            ObjectiveKind::Capacity { gamma } => LevelObjective::Capacity {
                c: capacity.expect("capacity mode provides budgets"),
                gamma,
            },
        }
    }

    /// Reported beta (0 in capacity mode, which has no KL weight).
    pub fn beta(&self) -> f64 {
        match self {
            LevelObjective::Standard { beta } | LevelObjective::Inverted { beta } => *beta,
            LevelObjective::Capacity { .. } => 0.0,
        }
    }

    fn total(&self, tape: &mut Tape, recon_avg: NodeId, kl: NodeId, d: usize) -> Result<NodeId> {
        let df = d as f64;
        match *self {
            LevelObjective::Standard { beta } => {
                tape.weighted_sum(vec![(recon_avg, 1.0), (kl, beta / df)])
            }
            LevelObjective::Inverted { beta } => {
                tape.weighted_sum(vec![(recon_avg, 1.0 / beta), (kl, 1.0 / df)])
            }
            LevelObjective::Capacity { c, gamma } => {
                let kl_per_dim = tape.scale(kl, 1.0 / df)?;
                let hinge = tape.hinge_above(kl_per_dim, c / df)?;
                tape.weighted_sum(vec![(recon_avg, 1.0), (hinge, gamma)])
            }
        }
    }
}

/// Averaged losses of one batch.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub recon_avg: f64,
    /// Mean of the non-reconstruction term (e.g. `beta * KL/d`).
    pub penalty: f64,
    /// Mean KL in total nats.
    pub kl: f64,
    pub kl_per_dim: f64,
    /// Bits per character over string-field tokens.
    pub bpc: f64,
    pub beta: f64,
    pub p_gt_tuple: f64,
    pub p_gt_string: f64,
    pub level: usize,
    pub per_field_recon: Vec<(String, f64)>,
    pub per_field_skew: Vec<(String, f64)>,
    pub batch_size: usize,
}

/// Everything a batch pass produces.
pub struct BatchOutput {
    pub report: LossReport,
    /// Mean gradients over the batch (when requested).
    pub grads: Option<Gradients>,
    /// Sampled latent per sample.
    pub sampled_z: Vec<Vec<f64>>,
    /// Mean latent per sample.
    pub mu: Vec<Vec<f64>>,
}

/// Inputs that stay constant across the batch.
pub struct BatchSettings<'a> {
    pub objective: LevelObjective,
    pub p_gt_tuple: f64,
    pub p_gt_string: f64,
    pub level: usize,
    pub field_weights: Option<&'a [f64]>,
    pub skew_in_average: bool,
    /// Derives per-sample noise streams; same seed, same batch, same
    /// losses.
    pub seed: u64,
    pub compute_grads: bool,
    pub parallel_chunks: usize,
}

struct SampleOutcome {
    total: f64,
    recon: f64,
    penalty: f64,
    kl: f64,
    string_nats: f64,
    string_tokens: usize,
    per_field_recon: Vec<f64>,
    per_field_skew: Vec<f64>,
    z: Vec<f64>,
    mu: Vec<f64>,
}

/// Forward (and optionally backward) pass over a batch of samples.
///
/// Per-sample randomness comes from streams derived from
/// `(settings.seed, sample index)`, so results do not depend on the
/// parallel chunking. Chunk boundaries are fixed by `parallel_chunks`,
/// and chunk gradients are reduced in order, keeping f64 summation
/// deterministic.
pub fn batch_loss(
    model: &RecordModel,
    store: &ParameterStore,
    stddev: &StdDevNetwork,
    samples: &[Sample],
    settings: &BatchSettings,
) -> Result<BatchOutput> {
    assert!(!samples.is_empty(), "batch must be non-empty");
    let d = model.plan.latent_dim;
    let n = samples.len();
    let chunk_size = n.div_ceil(settings.parallel_chunks.max(1));

    struct ChunkOut {
        outcomes: Vec<SampleOutcome>,
        grads: Option<Gradients>,
    }

    let chunks: Vec<Result<ChunkOut>> = samples
        .par_chunks(chunk_size)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut grads = settings.compute_grads.then(|| Gradients::new(store.len()));
            let mut outcomes = Vec::with_capacity(chunk.len());
            for (j, sample) in chunk.iter().enumerate() {
                let index = ci * chunk_size + j;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix(settings.seed, index as u64));
                let targets = model.prepare(sample)?;
                let mut tape = Tape::fast(store);
                let enc = model.encode(&mut tape, &targets)?;
                let sigma = stddev.forward(&mut tape, enc.mu)?;
                let z = reparameterize(&mut tape, enc.mu, sigma, &mut rng)?;
                let loss = model.decode_loss(
                    &mut tape,
                    z,
                    &enc,
                    &targets,
                    settings.p_gt_tuple,
                    settings.p_gt_string,
                    &mut rng,
                    settings.field_weights,
                    settings.skew_in_average,
                )?;
                let kl = tape.kl_diag(enc.mu, sigma)?;
                let total = settings
                    .objective
                    .total(&mut tape, loss.recon_avg, kl, d)?;
                if let Some(g) = grads.as_mut() {
                    g.accumulate(&tape.backward(total)?);
                }
                let recon_v = tape.value(loss.recon_avg).item();
                let total_v = tape.value(total).item();
                outcomes.push(SampleOutcome {
                    total: total_v,
                    recon: recon_v,
                    penalty: total_v - recon_v * settings.objective.recon_weight(),
                    kl: tape.value(kl).item(),
                    string_nats: loss.string_nats,
                    string_tokens: loss.string_tokens,
                    per_field_recon: loss
                        .recon
                        .iter()
                        .map(|(_, n)| tape.value(*n).item())
                        .collect(),
                    per_field_skew: loss
                        .skew
                        .iter()
                        .map(|(_, n)| tape.value(*n).item())
                        .collect(),
                    z: tape.value(z).data().to_vec(),
                    mu: tape.value(enc.mu).data().to_vec(),
                });
            }
            Ok(ChunkOut { outcomes, grads })
        })
        .collect();

    let mut outcomes: Vec<SampleOutcome> = Vec::with_capacity(n);
    let mut grads = settings.compute_grads.then(|| Gradients::new(store.len()));
    for chunk in chunks {
        let chunk = chunk?;
        outcomes.extend(chunk.outcomes);
        if let (Some(total), Some(part)) = (grads.as_mut(), chunk.grads.as_ref()) {
            total.accumulate(part);
        }
    }
    if let Some(g) = grads.as_mut() {
        g.scale(1.0 / n as f64);
    }

    let nf = n as f64;
    let mean = |f: &dyn Fn(&SampleOutcome) -> f64| outcomes.iter().map(|o| f(o)).sum::<f64>() / nf;
    let labels = model.element_labels();
    let n_fields = outcomes[0].per_field_recon.len();
    let per_field_recon: Vec<(String, f64)> = (0..n_fields)
        .map(|i| {
            (
                labels[i].clone(),
                outcomes.iter().map(|o| o.per_field_recon[i]).sum::<f64>() / nf,
            )
        })
        .collect();
    let n_skew = outcomes[0].per_field_skew.len();
    let per_field_skew: Vec<(String, f64)> = (0..n_skew)
        .map(|i| {
            (
                labels[i].clone(),
                outcomes.iter().map(|o| o.per_field_skew[i]).sum::<f64>() / nf,
            )
        })
        .collect();
    let total_tokens: usize = outcomes.iter().map(|o| o.string_tokens).sum();
    let total_nats: f64 = outcomes.iter().map(|o| o.string_nats).sum();
    let bpc = if total_tokens > 0 {
        total_nats / total_tokens as f64 / std::f64::consts::LN_2
    } else {
        0.0
    };
    let kl_mean = mean(&|o| o.kl);

    let report = LossReport {
        total: mean(&|o| o.total),
        recon_avg: mean(&|o| o.recon),
        penalty: mean(&|o| o.penalty),
        kl: kl_mean,
        kl_per_dim: kl_mean / d as f64,
        bpc,
        beta: settings.objective.beta(),
        p_gt_tuple: settings.p_gt_tuple,
        p_gt_string: settings.p_gt_string,
        level: settings.level,
        per_field_recon,
        per_field_skew,
        batch_size: n,
    };
    Ok(BatchOutput {
        report,
        grads,
        sampled_z: outcomes.iter().map(|o| o.z.clone()).collect(),
        mu: outcomes.into_iter().map(|o| o.mu).collect(),
    })
}

impl LevelObjective {
    /// Weight applied to `recon_avg` inside the total (1 except in
    /// inverted mode).
    fn recon_weight(&self) -> f64 {
        match self {
            LevelObjective::Inverted { beta } => 1.0 / beta,
            _ => 1.0,
        }
    }
}

pub(crate) fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 over the pair
    let mut x = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_reference_values() {
        // mu = 0, sigma = 1 -> 0
        assert_eq!(kl_diag_value(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        // d=1, mu=1, sigma=1 -> 0.5
        assert!((kl_diag_value(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        // d=1, mu=0, sigma^2=2 -> 0.5 * (2 - 1 - ln 2)
        let expected = 0.5 * (2.0 - 1.0 - (2.0f64).ln());
        let got = kl_diag_value(&[0.0], &[(2.0f64).sqrt()]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.153426).abs() < 1e-6);
        assert!(kl_diag_value(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo_estimate() {
        // KL(q || p) = E_q[ln q(x) - ln p(x)] with q = N(0, 2), p = N(0, 1),
        // estimated from 10^6 draws.
        let sigma = (2.0f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            let ln_q = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
                - x * x / (2.0 * sigma * sigma);
            let ln_p = -0.5 * (2.0 * std::f64::consts::PI).ln() - x * x / 2.0;
            acc += ln_q - ln_p;
        }
        let mc = acc / n as f64;
        let closed = kl_diag_value(&[0.0], &[sigma]).unwrap();
        // estimator std is ~7e-4 at this sample size
        assert!((mc - closed).abs() < 3.0 * 7.5e-4, "mc {mc} vs {closed}");
    }

    #[test]
    fn reparameterize_formula_and_moments() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let mu = tape.constant_vec(vec![0.2]);
        let sigma = tape.constant_vec(vec![0.5]);
        // forced eps through a seeded stream; check z = mu + sigma * eps
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = reparameterize(&mut tape, mu, sigma, &mut rng).unwrap();
        let mut check_rng = ChaCha8Rng::seed_from_u64(0);
        let eps: f64 = check_rng.sample(StandardNormal);
        assert!((tape.value(z).item() - (0.2 + 0.5 * eps)).abs() < 1e-15);

        // empirical mean of many draws approaches mu
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = 0.0;
        for _ in 0..n {
            let mut tape = Tape::new(&store);
            let mu = tape.constant_vec(vec![0.2]);
            let sigma = tape.constant_vec(vec![0.5]);
            let z = reparameterize(&mut tape, mu, sigma, &mut rng).unwrap();
            acc += tape.value(z).item();
        }
        let mean = acc / n as f64;
        let tol = 3.0 * 0.5 / (n as f64).sqrt();
        assert!((mean - 0.2).abs() < tol, "mean {mean}");
    }

    #[test]
    fn objective_reference_values() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let recon = tape.constant(Tensor::scalar(1.0));
        let kl = tape.constant(Tensor::scalar(12.8));
        // standard: 1.0 + 0.384 * 12.8/128 = 1.0384
        let t = LevelObjective::Standard { beta: 0.384 }
            .total(&mut tape, recon, kl, 128)
            .unwrap();
        assert!((tape.value(t).item() - 1.0384).abs() < 1e-12);
        // beta = 0 -> total = recon
        let t0 = LevelObjective::Standard { beta: 0.0 }
            .total(&mut tape, recon, kl, 128)
            .unwrap();
        assert_eq!(tape.value(t0).item(), 1.0);
        // inverted: recon/beta + KL/d with beta=0.5, KL/d=0.1 -> 2.1
        let kl2 = tape.constant(Tensor::scalar(0.1 * 128.0));
        let ti = LevelObjective::Inverted { beta: 0.5 }
            .total(&mut tape, recon, kl2, 128)
            .unwrap();
        assert!((tape.value(ti).item() - 2.1).abs() < 1e-12);
        // capacity with KL under budget: hinge inactive
        let tc = LevelObjective::Capacity { c: 20.0, gamma: 128.0 }
            .total(&mut tape, recon, kl, 128)
            .unwrap();
        assert_eq!(tape.value(tc).item(), 1.0);
        // capacity over budget: recon + gamma * (KL/d - C/d)
        let tc2 = LevelObjective::Capacity { c: 6.4, gamma: 128.0 }
            .total(&mut tape, recon, kl, 128)
            .unwrap();
        let expected = 1.0 + 128.0 * (12.8 / 128.0 - 6.4 / 128.0);
        assert!((tape.value(tc2).item() - expected).abs() < 1e-12);
    }
}
