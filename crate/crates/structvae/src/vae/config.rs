//! Training configuration: every hyperparameter of the variational
//! schemes, with the defaults used throughout the experiments.

use serde::{Deserialize, Serialize};

use crate::diff::OptimizerConfig;
use crate::error::{Error, Result};
use crate::schema::Variant;

/// Recurrent-decoder input policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Ground-truth inputs (`p_gt = 1`).
    #[serde(alias = "tf")]
    TeacherForcing,
    /// Inputs drawn from the decoder's own distribution (`p_gt = 0`).
    #[serde(alias = "as")]
    AlwaysSampling,
    /// Ground-truth probability decays linearly from 1 to 0 over the
    /// warm-up period.
    #[serde(alias = "ss")]
    Scheduled,
}

/// Multiscale training spec: how per-level KL weights are spaced and
/// which objective the levels train.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MultiscaleSpec {
    /// Single objective from the `beta_*` schedule.
    Off,
    /// `beta_i = (i+1)/n * beta_max`.
    Linear,
    /// `beta_i = r^(n-1-i) * beta_max`.
    Geometric { r: f64 },
    /// Geometric spacing with the weights inverted: reconstruction is
    /// divided by `beta_i` instead of multiplying the KL term.
    Inverted { r: f64 },
    /// Per-level capacity budgets `C_i = c_min + i * c_increment` with a
    /// hinge penalty of weight `gamma` per latent dimension.
    Capacity {
        c_min: f64,
        c_increment: f64,
        gamma: f64,
    },
}

impl MultiscaleSpec {
    pub fn is_off(&self) -> bool {
        matches!(self, MultiscaleSpec::Off)
    }
}

/// Per-level `p_sampled` spacing for multiscale + augmented training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PSpacing {
    /// Every level uses the configured `p_sampled`.
    Constant,
    /// Arithmetic sequence on `(p_min, p_max]`: level i gets
    /// `p_min + (i+1) * (p_max - p_min) / n`.
    Linear { p_min: f64, p_max: f64 },
    /// Geometric sequence on `(p_min, p_max]`: level i gets
    /// `p_max * (p_min / p_max)^((n-1-i)/n)`.
    Geometric { p_min: f64, p_max: f64 },
}

/// Everything the training loop needs to know.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,

    pub variant: Variant,
    pub latent_dim: usize,
    pub state_dim: usize,
    pub char_embed_dim: usize,
    /// Pass-through variant: string fields to drop from the plan.
    pub omit_fields: Vec<String>,

    /// KL weight schedule: `beta_start -> beta_mid` over the warm-up,
    /// then `beta_mid -> beta_end` over the rest.
    pub beta_start: f64,
    pub beta_mid: f64,
    pub beta_end: f64,
    pub warmup_steps: usize,

    pub string_mode: SamplingMode,
    pub tuple_mode: SamplingMode,

    /// Augmented training: pool re-initialization probability.
    pub p_sampled: f64,
    /// Augmented training: pool size; 0 disables augmentation.
    pub n_augmented: usize,
    /// Step after which augmented training starts.
    pub gen_start_step: usize,

    pub multiscale: MultiscaleSpec,
    /// Number of multiscale levels.
    pub n_kl_weight: usize,
    /// `beta_max` schedule for multiscale: linear from start to end over
    /// the warm-up period, constant afterwards.
    pub beta_max_start: f64,
    pub beta_max_end: f64,
    pub p_spacing: PSpacing,

    pub optimizer: OptimizerConfig,

    /// Decay of the latent moment tracker that drives generation.
    pub tracker_decay: f64,
    /// Update the tracker from every level's batches (false: lowest-beta
    /// level only).
    pub track_all_levels: bool,

    /// Steps between test/generated evaluations during training.
    pub eval_interval: usize,
    /// Samples per test/generated evaluation.
    pub eval_samples: usize,
    /// Steps between train-split metric rows.
    pub log_interval: usize,

    /// Cap on generated string length.
    pub max_gen_len: usize,
    /// Per-element weights of the reconstruction average (default all 1).
    pub field_weights: Option<Vec<f64>>,
    /// Keep skew terms inside the per-field average (false: add their raw
    /// sum on top).
    pub skew_in_average: bool,
    /// Fixed chunk count for deterministic parallel gradient reduction.
    pub parallel_chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2_000_000,
            batch_size: 256,
            seed: 0,
            variant: Variant::Tuple,
            latent_dim: 128,
            state_dim: 128,
            char_embed_dim: 16,
            omit_fields: Vec::new(),
            beta_start: 0.0,
            beta_mid: 0.384,
            beta_end: 0.384,
            warmup_steps: 2_000_000,
            string_mode: SamplingMode::TeacherForcing,
            tuple_mode: SamplingMode::Scheduled,
            p_sampled: 0.2,
            n_augmented: 0,
            gen_start_step: 0,
            multiscale: MultiscaleSpec::Off,
            n_kl_weight: 32,
            beta_max_start: 1.28,
            beta_max_end: 0.64,
            p_spacing: PSpacing::Constant,
            optimizer: OptimizerConfig::default(),
            tracker_decay: 0.999,
            track_all_levels: true,
            eval_interval: 1000,
            eval_samples: 256,
            log_interval: 100,
            max_gen_len: 64,
            field_weights: None,
            skew_in_average: true,
            parallel_chunks: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(self.p_sampled > 0.0 && self.p_sampled <= 1.0) {
            return bad(format!("p_sampled must be in (0, 1], got {}", self.p_sampled));
        }
        for (name, v) in [
            ("beta_start", self.beta_start),
            ("beta_mid", self.beta_mid),
            ("beta_end", self.beta_end),
            ("beta_max_start", self.beta_max_start),
            ("beta_max_end", self.beta_max_end),
        ] {
            if v < 0.0 || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.warmup_steps > self.steps {
            return bad(format!(
                "warmup_steps ({}) must not exceed steps ({})",
                self.warmup_steps, self.steps
            ));
        }
        if self.n_augmented > self.batch_size {
            return bad(format!(
                "n_augmented ({}) must not exceed batch_size ({}): pool re-initialization \
                 selects batch examples without replacement",
                self.n_augmented, self.batch_size
            ));
        }
        if self.n_kl_weight == 0 {
            return bad("n_kl_weight must be at least 1".into());
        }
        match self.multiscale {
            MultiscaleSpec::Geometric { r } | MultiscaleSpec::Inverted { r } => {
                if !(r > 0.0 && r < 1.0) {
                    return bad(format!("geometric ratio r must be in (0, 1), got {r}"));
                }
            }
            MultiscaleSpec::Capacity { gamma, .. } => {
                if gamma < 0.0 {
                    return bad(format!("capacity gamma must be non-negative, got {gamma}"));
                }
            }
            _ => {}
        }
        if !self.multiscale.is_off() && matches!(self.multiscale, MultiscaleSpec::Linear | MultiscaleSpec::Geometric { .. } | MultiscaleSpec::Inverted { .. })
            && self.beta_max_start <= 0.0 && self.beta_max_end <= 0.0
        {
            return bad("multiscale needs a positive beta_max".into());
        }
        match self.p_spacing {
            PSpacing::Linear { p_min, p_max } | PSpacing::Geometric { p_min, p_max } => {
                if !(p_min > 0.0 && p_min <= p_max && p_max <= 1.0) {
                    return bad(format!(
                        "p spacing needs 0 < p_min <= p_max <= 1, got ({p_min}, {p_max})"
                    ));
                }
            }
            PSpacing::Constant => {}
        }
        if self.parallel_chunks == 0 {
            return bad("parallel_chunks must be at least 1".into());
        }
        if self.eval_interval == 0 || self.log_interval == 0 {
            return bad("eval_interval and log_interval must be positive".into());
        }
        if let Some(w) = &self.field_weights {
            if w.iter().any(|v| *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return bad("field_weights must be non-negative with a positive sum".into());
            }
        }
        if self.max_gen_len == 0 {
            return bad("max_gen_len must be positive".into());
        }
        Ok(())
    }

    /// Number of simultaneous objective levels.
    pub fn n_levels(&self) -> usize {
        if self.multiscale.is_off() {
            1
        } else {
            self.n_kl_weight
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = TrainConfig::default();
        c.p_sampled = 0.0;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.n_augmented = c.batch_size + 1;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.warmup_steps = c.steps + 1;
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.multiscale = MultiscaleSpec::Geometric { r: 1.5 };
        assert!(c.validate().is_err());

        let mut c = TrainConfig::default();
        c.p_spacing = PSpacing::Linear {
            p_min: 0.5,
            p_max: 0.2,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn sampling_mode_aliases_deserialize() {
        let m: SamplingMode = serde_json::from_str("\"tf\"").unwrap();
        assert_eq!(m, SamplingMode::TeacherForcing);
        let m: SamplingMode = serde_json::from_str("\"scheduled\"").unwrap();
        assert_eq!(m, SamplingMode::Scheduled);
    }

    #[test]
    fn multiscale_spec_toml_round_trip() {
        let spec = MultiscaleSpec::Capacity {
            c_min: 10.0,
            c_increment: 0.5,
            gamma: 128.0,
        };
        let s = toml::to_string(&spec).unwrap();
        let back: MultiscaleSpec = toml::from_str(&s).unwrap();
        assert_eq!(spec, back);
    }
}
