//! Adam optimizer, global-norm gradient clipping, learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};
use crate::error::{Error, Result};

/// Optimizer constants. Defaults follow the training recipe: initial
/// learning rate 2.5e-4 decaying continuously by 0.99 per 1000 steps,
/// Adam `(0.9, 0.999, 1e-8)`, gradients clipped at global L2 norm 0.01.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_steps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 2.5e-4,
            lr_decay: 0.99,
            lr_decay_steps: 1000.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 0.01,
        }
    }
}

/// Learning rate at `step`: `lr0 * decay^(step / decay_steps)`, evaluated
/// continuously per step.
pub fn learning_rate(cfg: &OptimizerConfig, step: usize) -> f64 {
    cfg.learning_rate * cfg.lr_decay.powf(step as f64 / cfg.lr_decay_steps)
}

/// Scales all gradients by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`; otherwise leaves them unchanged.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One Adam update with bias correction at the scheduled learning rate.
/// `step` is the 0-based training step; bias correction uses `step + 1`.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    step: usize,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            expected: format!("{} gradients", store.len()),
            got: format!("{}", grads.len()),
        });
    }
    let lr = learning_rate(cfg, step);
    let t = (step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in grads.iter() {
        let (value, m, v) = store.adam_state_mut(id);
        for ((p, g), (m, v)) in value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::tensor::Tensor;

    #[test]
    fn learning_rate_schedule_reference_points() {
        let cfg = OptimizerConfig::default();
        assert_eq!(learning_rate(&cfg, 0), 2.5e-4);
        assert!((learning_rate(&cfg, 1000) - 2.475e-4).abs() < 1e-12);
        assert!((learning_rate(&cfg, 2000) - 2.5e-4 * 0.99 * 0.99).abs() < 1e-12);
        // continuous between the 1000-step marks
        assert!(learning_rate(&cfg, 500) < 2.5e-4);
        assert!(learning_rate(&cfg, 500) > 2.475e-4);
    }

    fn grads_with(values: Vec<Vec<f64>>) -> (ParameterStore, Gradients) {
        let mut store = ParameterStore::new();
        let mut grads = Gradients::new(values.len());
        for (i, v) in values.into_iter().enumerate() {
            let id = store
                .register_tensor(&format!("p{i}"), Tensor::zeros(&[v.len()]))
                .unwrap();
            grads.insert(id, Tensor::vector(v));
        }
        (store, grads)
    }

    #[test]
    fn clip_scales_only_when_norm_exceeds_max() {
        let (_s, mut grads) = grads_with(vec![vec![0.6, 0.8]]); // norm 1.0
        clip_global_norm(&mut grads, 0.01);
        let g = grads.iter().next().unwrap().1.data().to_vec();
        assert!((g[0] - 0.006).abs() < 1e-15);
        assert!((g[1] - 0.008).abs() < 1e-15);

        let (_s, mut small) = grads_with(vec![vec![0.003, 0.004]]); // norm 0.005
        let before: Vec<f64> = small.iter().next().unwrap().1.data().to_vec();
        clip_global_norm(&mut small, 0.01);
        assert_eq!(small.iter().next().unwrap().1.data(), before.as_slice());

        let (_s, mut zero) = grads_with(vec![vec![0.0, 0.0]]);
        clip_global_norm(&mut zero, 0.01);
        assert_eq!(zero.iter().next().unwrap().1.data(), &[0.0, 0.0]);
    }

    #[test]
    fn clip_is_idempotent() {
        let (_s, mut grads) = grads_with(vec![vec![3.0, -4.0], vec![12.0]]);
        clip_global_norm(&mut grads, 0.01);
        let once: Vec<Vec<f64>> = grads.iter().map(|(_, t)| t.data().to_vec()).collect();
        clip_global_norm(&mut grads, 0.01);
        let twice: Vec<Vec<f64>> = grads.iter().map(|(_, t)| t.data().to_vec()).collect();
        for (a, b) in once.iter().zip(&twice) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
    }

    /// Independent scalar Adam oracle, written straight from the update
    /// equations.
    fn adam_oracle(p0: f64, grad: f64, steps: usize, cfg: &OptimizerConfig) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for s in 0..steps {
            let lr = cfg.learning_rate * cfg.lr_decay.powf(s as f64 / cfg.lr_decay_steps);
            let t = (s + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        p
    }

    #[test]
    fn adam_matches_scalar_oracle_and_descends() {
        let cfg = OptimizerConfig::default();
        // loss = p^2 / 2 at p = 1 has gradient 1
        let mut store = ParameterStore::new();
        let id = store
            .register_tensor("p", Tensor::vector(vec![1.0]))
            .unwrap();
        let mut expected = 1.0;
        for step in 0..5 {
            let g = store.get(id).data()[0]; // grad of p^2/2 is p
            let mut grads = Gradients::new(1);
            grads.insert(id, Tensor::vector(vec![g]));
            adam_step(&mut store, &grads, step, &cfg).unwrap();
            let _ = expected;
        }
        assert!(store.get(id).data()[0] < 1.0, "parameter should decrease");

        // constant-gradient trajectory against the oracle
        let mut store2 = ParameterStore::new();
        let id2 = store2
            .register_tensor("p", Tensor::vector(vec![1.0]))
            .unwrap();
        for step in 0..7 {
            let mut grads = Gradients::new(1);
            grads.insert(id2, Tensor::vector(vec![1.0]));
            adam_step(&mut store2, &grads, step, &cfg).unwrap();
        }
        expected = adam_oracle(1.0, 1.0, 7, &cfg);
        assert!((store2.get(id2).data()[0] - expected).abs() < 1e-15);
    }
}
