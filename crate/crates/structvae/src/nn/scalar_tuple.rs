//! Joint model for the two scalar fields with on-the-fly PCA whitening.
//!
//! Moving mean and covariance of the raw `(lat, long)` pairs are tracked
//! with decay 0.999; inputs are whitened through the eigendecomposition
//! of `Sigma + eps I` before entering the network, and generation
//! un-whitens predictions through the exact inverse map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{InitSpec, NodeId, ParamId, ParameterStore, Tape, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_DECAY: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Cached whitening factors for frozen statistics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WhitenFactors {
    mean: [f64; 2],
    /// Columns are eigenvectors of `Sigma + eps I`, largest eigenvalue
    /// first.
    u: [[f64; 2]; 2],
    sqrt_eig: [f64; 2],
}

impl WhitenFactors {
    pub fn whiten(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        [
            (d[0] * self.u[0][0] + d[1] * self.u[1][0]) / self.sqrt_eig[0],
            (d[0] * self.u[0][1] + d[1] * self.u[1][1]) / self.sqrt_eig[1],
        ]
    }

    pub fn unwhiten(&self, y: [f64; 2]) -> [f64; 2] {
        let s = [y[0] * self.sqrt_eig[0], y[1] * self.sqrt_eig[1]];
        [
            self.mean[0] + self.u[0][0] * s[0] + self.u[0][1] * s[1],
            self.mean[1] + self.u[1][0] * s[0] + self.u[1][1] * s[1],
        ]
    }
}

/// Eigendecomposition of a symmetric 2x2 matrix, eigenvalues descending.
/// Eigenvector signs are fixed so the largest-magnitude component of each
/// column is positive.
pub fn sym_eig_2x2(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    if b.abs() <= 1e-14 * (a.abs() + c.abs()).max(1e-300) {
        if a >= c {
            return ([a, c], [[1.0, 0.0], [0.0, 1.0]]);
        }
        return ([c, a], [[0.0, 1.0], [1.0, 0.0]]);
    }
    let half_tr = (a + c) / 2.0;
    let disc = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    let mut v1 = [b, l1 - a];
    let n1 = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
    v1 = [v1[0] / n1, v1[1] / n1];
    if v1[0].abs() >= v1[1].abs() {
        if v1[0] < 0.0 {
            v1 = [-v1[0], -v1[1]];
        }
    } else if v1[1] < 0.0 {
        v1 = [-v1[0], -v1[1]];
    }
    let mut v2 = [-v1[1], v1[0]];
    if v2[0].abs() >= v2[1].abs() {
        if v2[0] < 0.0 {
            v2 = [-v2[0], -v2[1]];
        }
    } else if v2[1] < 0.0 {
        v2 = [-v2[0], -v2[1]];
    }
    ([l1, l2], [[v1[0], v2[0]], [v1[1], v2[1]]])
}

/// Moving mean/covariance of the scalar pair. The first update adopts
/// the batch statistics outright; later updates blend with decay alpha.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MovingStats {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub initialized: bool,
    pub decay: f64,
    pub epsilon: f64,
    factors: Option<WhitenFactors>,
}

impl MovingStats {
    pub fn new(decay: f64, epsilon: f64) -> MovingStats {
        MovingStats {
            mean: [0.0; 2],
            cov: [[0.0; 2]; 2],
            initialized: false,
            decay,
            epsilon,
            factors: None,
        }
    }

    /// Explicit seed, mainly for tests and checkpoint restore.
    pub fn seed(&mut self, mean: [f64; 2], cov: [[f64; 2]; 2]) {
        self.mean = mean;
        self.cov = cov;
        self.initialized = true;
        self.refresh_factors();
    }

    /// Batch update: `mu <- a*mu + (1-a)*mu_B`, same for the covariance
    /// (unbiased batch covariance). Requires at least two points.
    pub fn update(&mut self, batch: &[[f64; 2]]) -> Result<()> {
        if batch.len() < 2 {
            return Err(Error::BatchTooSmall(batch.len()));
        }
        let n = batch.len() as f64;
        let mut mean_b = [0.0; 2];
        for p in batch {
            mean_b[0] += p[0];
            mean_b[1] += p[1];
        }
        mean_b[0] /= n;
        mean_b[1] /= n;
        let mut cov_b = [[0.0; 2]; 2];
        for p in batch {
            let d = [p[0] - mean_b[0], p[1] - mean_b[1]];
            cov_b[0][0] += d[0] * d[0];
            cov_b[0][1] += d[0] * d[1];
            cov_b[1][1] += d[1] * d[1];
        }
        let denom = n - 1.0;
        cov_b[0][0] /= denom;
        cov_b[0][1] /= denom;
        cov_b[1][1] /= denom;
        cov_b[1][0] = cov_b[0][1];

        if !self.initialized {
            self.mean = mean_b;
            self.cov = cov_b;
            self.initialized = true;
        } else {
            let a = self.decay;
            for i in 0..2 {
                self.mean[i] = a * self.mean[i] + (1.0 - a) * mean_b[i];
                for j in 0..2 {
                    self.cov[i][j] = a * self.cov[i][j] + (1.0 - a) * cov_b[i][j];
                }
            }
            // keep symmetric against drift
            let s = (self.cov[0][1] + self.cov[1][0]) / 2.0;
            self.cov[0][1] = s;
            self.cov[1][0] = s;
        }
        self.refresh_factors();
        Ok(())
    }

    fn refresh_factors(&mut self) {
        let reg = [
            [self.cov[0][0] + self.epsilon, self.cov[0][1]],
            [self.cov[1][0], self.cov[1][1] + self.epsilon],
        ];
        let (eig, u) = sym_eig_2x2(reg);
        assert!(eig[0] > 0.0 && eig[1] > 0.0, "regularized covariance must be PD");
        self.factors = Some(WhitenFactors {
            mean: self.mean,
            u,
            sqrt_eig: [eig[0].sqrt(), eig[1].sqrt()],
        });
    }

    pub fn factors(&self) -> Result<&WhitenFactors> {
        self.factors.as_ref().ok_or(Error::StatsUninitialized)
    }
}

#[derive(Clone, Debug)]
pub struct ScalarTupleModule {
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    pub dec_w: ParamId,
    pub dec_b: ParamId,
    pub stats: MovingStats,
    pub latent_dim: usize,
}

impl ScalarTupleModule {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<ScalarTupleModule> {
        let enc_w = store.register(
            &format!("{prefix}.enc.w"),
            InitSpec::VarianceScaled,
            &[latent_dim, 2],
            rng,
        )?;
        let enc_b = store.register(&format!("{prefix}.enc.b"), InitSpec::Zeros, &[latent_dim], rng)?;
        let dec_w = store.register(
            &format!("{prefix}.dec.w"),
            InitSpec::VarianceScaled,
            &[2, latent_dim],
            rng,
        )?;
        let dec_b = store.register(&format!("{prefix}.dec.b"), InitSpec::Zeros, &[2], rng)?;
        Ok(ScalarTupleModule {
            enc_w,
            enc_b,
            dec_w,
            dec_b,
            stats: MovingStats::new(DEFAULT_DECAY, DEFAULT_EPSILON),
            latent_dim,
        })
    }

    pub fn whiten(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        Ok(self.stats.factors()?.whiten(x))
    }

    pub fn unwhiten(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        Ok(self.stats.factors()?.unwhiten(y))
    }

    /// Embedding of a whitened pair through the sigmoid encoder layer.
    pub fn encode(&self, tape: &mut Tape, whitened: [f64; 2]) -> Result<NodeId> {
        let w = tape.param(self.enc_w);
        let b = tape.param(self.enc_b);
        let x = tape.constant(Tensor::vector(whitened.to_vec()));
        let pre = tape.linear(w, x, b)?;
        tape.sigmoid(pre)
    }

    /// Sum of squared errors between the linear decoder's prediction and
    /// the whitened target.
    pub fn decode_loss(&self, tape: &mut Tape, embedding: NodeId, whitened: [f64; 2]) -> Result<NodeId> {
        let w = tape.param(self.dec_w);
        let b = tape.param(self.dec_b);
        let pred = tape.linear(w, embedding, b)?;
        let target = tape.constant(Tensor::vector(whitened.to_vec()));
        tape.sq_err_sum(pred, target)
    }

    /// Raw-scale prediction for generation: decode then un-whiten.
    pub fn decode_value(&self, tape: &mut Tape, embedding: NodeId) -> Result<[f64; 2]> {
        let w = tape.param(self.dec_w);
        let b = tape.param(self.dec_b);
        let pred = tape.linear(w, embedding, b)?;
        let y = tape.value(pred).data();
        self.unwhiten([y[0], y[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identity_cov_whitening_is_epsilon_scaled_identity() {
        let mut stats = MovingStats::new(DEFAULT_DECAY, DEFAULT_EPSILON);
        stats.seed([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        let f = stats.factors().unwrap();
        let y = f.whiten([2.0, -3.0]);
        let scale = (1.0 + 1e-5f64).sqrt();
        assert!((y[0] - 2.0 / scale).abs() < 1e-12);
        assert!((y[1] + 3.0 / scale).abs() < 1e-12);
    }

    #[test]
    fn whiten_unwhiten_round_trip() {
        let mut stats = MovingStats::new(DEFAULT_DECAY, DEFAULT_EPSILON);
        stats.seed([44.2, -72.5], [[0.3, 0.12], [0.12, 0.2]]);
        let f = stats.factors().unwrap();
        for x in [[44.0, -72.0], [44.9, -73.1], [43.5, -72.6]] {
            let back = f.unwhiten(f.whiten(x));
            assert!((back[0] - x[0]).abs() < 1e-6);
            assert!((back[1] - x[1]).abs() < 1e-6);
        }
    }

    /// Independent 2x2 eigendecomposition oracle via direct
    /// characteristic-polynomial roots and explicit eigenvector solve.
    fn eig_oracle(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
        // roots of x^2 - (a+c) x + (ac - b^2)
        let tr = a + c;
        let det = a * c - b * b;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let l1 = tr / 2.0 + disc;
        let l2 = tr / 2.0 - disc;
        let vec_for = |l: f64| -> [f64; 2] {
            // (a - l) v0 + b v1 = 0
            let mut v = if b.abs() > 1e-300 {
                [b, l - a]
            } else if (a - l).abs() < (c - l).abs() {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            };
            let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
            v = [v[0] / n, v[1] / n];
            if (v[0].abs() >= v[1].abs() && v[0] < 0.0) || (v[0].abs() < v[1].abs() && v[1] < 0.0) {
                v = [-v[0], -v[1]];
            }
            v
        };
        let v1 = vec_for(l1);
        let v2 = vec_for(l2);
        ([l1, l2], [[v1[0], v2[0]], [v1[1], v2[1]]])
    }

    #[test]
    fn whitening_matches_eigendecomposition_oracle() {
        let cov = [[2.0, 1.0], [1.0, 2.0]];
        let mut stats = MovingStats::new(DEFAULT_DECAY, DEFAULT_EPSILON);
        stats.seed([0.0, 0.0], cov);
        let f = stats.factors().unwrap();
        let y = f.whiten([1.0, 1.0]);

        let reg = [[2.0 + 1e-5, 1.0], [1.0, 2.0 + 1e-5]];
        let (eig, u) = eig_oracle(reg);
        let x = [1.0, 1.0];
        let expected = [
            (x[0] * u[0][0] + x[1] * u[1][0]) / eig[0].sqrt(),
            (x[0] * u[0][1] + x[1] * u[1][1]) / eig[1].sqrt(),
        ];
        assert!((y[0] - expected[0]).abs() < 1e-10, "{y:?} vs {expected:?}");
        assert!((y[1] - expected[1]).abs() < 1e-10);
        // eigenvalues of [[2,1],[1,2]] are 3 and 1
        assert!((eig[0] - 3.0 - 1e-5).abs() < 1e-12);
        assert!((eig[1] - 1.0 - 1e-5).abs() < 1e-12);
    }

    #[test]
    fn whitened_samples_have_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = [5.0, -7.0];
        let chol = [[0.8, 0.0], [0.5, 0.6]];
        let samples: Vec<[f64; 2]> = (0..20000)
            .map(|_| {
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                [
                    mean[0] + chol[0][0] * e0,
                    mean[1] + chol[1][0] * e0 + chol[1][1] * e1,
                ]
            })
            .collect();
        let mut stats = MovingStats::new(DEFAULT_DECAY, 1e-12);
        stats.update(&samples).unwrap();
        let f = stats.factors().unwrap();
        let whitened: Vec<[f64; 2]> = samples.iter().map(|&x| f.whiten(x)).collect();
        let n = whitened.len() as f64;
        let mut m = [0.0; 2];
        for w in &whitened {
            m[0] += w[0];
            m[1] += w[1];
        }
        m[0] /= n;
        m[1] /= n;
        let mut c = [[0.0; 2]; 2];
        for w in &whitened {
            let d = [w[0] - m[0], w[1] - m[1]];
            c[0][0] += d[0] * d[0];
            c[0][1] += d[0] * d[1];
            c[1][1] += d[1] * d[1];
        }
        for (i, j, target) in [(0, 0, 1.0), (0, 1, 0.0), (1, 1, 1.0)] {
            assert!(
                (c[i][j] / (n - 1.0) - target).abs() < 0.02,
                "cov[{i}][{j}] = {}",
                c[i][j] / (n - 1.0)
            );
        }
    }

    #[test]
    fn moving_update_blends_with_decay() {
        let mut stats = MovingStats::new(0.999, DEFAULT_EPSILON);
        stats.seed([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]]);
        // batch of identical points: batch cov = 0, batch mean = (3, 5)
        stats.update(&[[3.0, 5.0], [3.0, 5.0], [3.0, 5.0]]).unwrap();
        assert!((stats.mean[0] - (0.999 + 0.001 * 3.0)).abs() < 1e-12);
        assert!((stats.mean[1] - (0.999 + 0.001 * 5.0)).abs() < 1e-12);
        assert!((stats.cov[0][0] - 0.999).abs() < 1e-12);
        assert!((stats.cov[0][1]).abs() < 1e-12);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let mut stats = MovingStats::new(0.999, DEFAULT_EPSILON);
        assert!(matches!(
            stats.update(&[[1.0, 2.0]]),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn repeated_updates_converge_to_true_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = [2.0, -1.0];
        let chol = [[0.5, 0.0], [0.2, 0.4]];
        let true_cov = [
            [chol[0][0] * chol[0][0], chol[0][0] * chol[1][0]],
            [chol[0][0] * chol[1][0], chol[1][0] * chol[1][0] + chol[1][1] * chol[1][1]],
        ];
        let mut stats = MovingStats::new(0.99, DEFAULT_EPSILON);
        for _ in 0..3000 {
            let batch: Vec<[f64; 2]> = (0..64)
                .map(|_| {
                    let e0: f64 = rng.sample(StandardNormal);
                    let e1: f64 = rng.sample(StandardNormal);
                    [
                        mean[0] + chol[0][0] * e0,
                        mean[1] + chol[1][0] * e0 + chol[1][1] * e1,
                    ]
                })
                .collect();
            stats.update(&batch).unwrap();
        }
        assert!((stats.mean[0] - mean[0]).abs() < 0.02);
        assert!((stats.mean[1] - mean[1]).abs() < 0.02);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (stats.cov[i][j] - true_cov[i][j]).abs() < 0.02,
                    "cov[{i}][{j}] {} vs {}",
                    stats.cov[i][j],
                    true_cov[i][j]
                );
            }
        }
    }

    #[test]
    fn uninitialized_stats_error() {
        let stats = MovingStats::new(0.999, DEFAULT_EPSILON);
        assert!(matches!(stats.factors(), Err(Error::StatsUninitialized)));
    }

    #[test]
    fn perfect_prediction_and_unit_offset_losses() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ScalarTupleModule::new(&mut store, "scalar", 6, &mut rng).unwrap();
        m.stats.seed([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]);

        // zero decoder weights & bias equal to the target -> loss 0
        store.set(m.dec_w, Tensor::zeros(&[2, 6])).unwrap();
        store
            .set(m.dec_b, Tensor::vector(vec![0.7, -0.4]))
            .unwrap();
        let mut tape = Tape::new(&store);
        let emb = tape.constant_vec(vec![0.0; 6]);
        let loss = m.decode_loss(&mut tape, emb, [0.7, -0.4]).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-15);

        // prediction off by (1, 0) in whitened space -> loss 1
        let mut tape = Tape::new(&store);
        let emb = tape.constant_vec(vec![0.0; 6]);
        let loss = m.decode_loss(&mut tape, emb, [1.7, -0.4]).unwrap();
        assert!((tape.value(loss).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encoder_decoder_gradients_match_finite_differences() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = ScalarTupleModule::new(&mut store, "scalar", 4, &mut rng).unwrap();
        m.stats.seed([1.0, 2.0], [[0.5, 0.1], [0.1, 0.3]]);
        let xw = m.whiten([1.3, 1.9]).unwrap();

        let forward = |store: &ParameterStore| -> Result<f64> {
            let mut tape = Tape::new(store);
            let emb = m.encode(&mut tape, xw)?;
            let loss = m.decode_loss(&mut tape, emb, xw)?;
            Ok(tape.value(loss).item())
        };
        let mut tape = Tape::new(&store);
        let emb = m.encode(&mut tape, xw).unwrap();
        let loss = m.decode_loss(&mut tape, emb, xw).unwrap();
        let grads = tape.backward(loss).unwrap();
        let report = crate::diff::gradcheck::compare_gradients(
            &mut store,
            &grads,
            crate::diff::gradcheck::DEFAULT_STEP,
            forward,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}
