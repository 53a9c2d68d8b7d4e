//! Evaluation-time operations: generation from the tracked latent
//! Gaussian, generated-loss measurement, repeated encode/decode, and
//! latent interpolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::mix;
use super::tracker::LatentMomentTracker;
use crate::diff::{ParameterStore, Tape};
use crate::error::Result;
use crate::nn::{RecordModel, Sample};

/// Draws `n` samples: latents from the tracker's `N(mu, Sigma)` (the unit
/// Gaussian before any update), decoded with softmax sampling.
pub fn generate(
    model: &RecordModel,
    store: &ParameterStore,
    tracker: &LatentMomentTracker,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let sampler = tracker.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = sampler.sample(&mut rng);
            let mut tape = Tape::no_grad(store);
            let zn = tape.constant_vec(z);
            model.generate(&mut tape, zn, &mut rng, max_len, false)
        })
        .collect()
}

/// One round of mean-vector encode/decode: `x' = g(mu(x))`.
fn reencode_round(
    model: &RecordModel,
    store: &ParameterStore,
    samples: &[Sample],
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| {
            let mu = model.encode_mu(store, s)?;
            let mut tape = Tape::no_grad(store);
            let zn = tape.constant_vec(mu);
            model.generate(&mut tape, zn, rng, max_len, false)
        })
        .collect()
}

/// Repeated encode/decode rounds. Round 0 is the input batch itself;
/// round n is `g(mu(round n-1))` — encoding always uses the mean vector,
/// never a sampled latent.
pub fn repeated_encode_decode(
    model: &RecordModel,
    store: &ParameterStore,
    samples: &[Sample],
    n_rounds: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    assert!(n_rounds >= 1, "need at least one round");
    let mut rounds = Vec::with_capacity(n_rounds);
    rounds.push(samples.to_vec());
    for r in 1..n_rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, r as u64));
        let next = reencode_round(model, store, rounds.last().unwrap(), max_len, &mut rng)?;
        rounds.push(next);
    }
    Ok(rounds)
}

/// One interpolation point.
#[derive(Clone, Debug)]
pub struct InterpolationPoint {
    /// Mixing weight on the first record's mean latent.
    pub lambda: f64,
    pub sample: Sample,
}

/// Decodes `k` evenly spaced latents `lambda * mu(a) + (1-lambda) * mu(b)`
/// with `lambda` running from 1 to 0 (so the first point reconstructs
/// `a`). `argmax` switches string decoding from sampling to argmax for
/// deterministic inspection.
pub fn interpolate(
    model: &RecordModel,
    store: &ParameterStore,
    a: &Sample,
    b: &Sample,
    k: usize,
    max_len: usize,
    seed: u64,
    argmax: bool,
) -> Result<Vec<InterpolationPoint>> {
    assert!(k >= 2, "interpolation needs at least the two endpoints");
    let mu_a = model.encode_mu(store, a)?;
    let mu_b = model.encode_mu(store, b)?;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let lambda = 1.0 - i as f64 / (k - 1) as f64;
        let z: Vec<f64> = mu_a
            .iter()
            .zip(&mu_b)
            .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
        let mut tape = Tape::no_grad(store);
        let zn = tape.constant_vec(z);
        let sample = model.generate(&mut tape, zn, &mut rng, max_len, argmax)?;
        out.push(InterpolationPoint { lambda, sample });
    }
    Ok(out)
}
