//! The training loop: schedules, batching, multiscale level rotation,
//! augmented-pool management, Adam updates, and the metrics trace.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::AugmentedPool;
use super::config::TrainConfig;
use super::loss::{batch_loss, mix, BatchSettings, LevelObjective, LossReport};
use super::multiscale::{multiscale_assign, MultiscaleBank};
use super::schedule::{beta_max_schedule, beta_schedule, p_gt_for};
use super::tracker::LatentMomentTracker;
use crate::data::AddressRecord;
use crate::diff::{adam_step, clip_global_norm, ParameterStore, Tape};
use crate::error::{Error, Result};
use crate::nn::{build_vocab, RecordModel, Sample, Vocab};
use crate::schema::{compile, CompileOptions, PlanRoot, Schema};

// Derived-stream tags.
const INIT_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;
const AUGMENT_STREAM: u64 = 4;
const POOL_STREAM: u64 = 5;
const EVAL_TEST_STREAM: u64 = 6;
const EVAL_GEN_STREAM: u64 = 7;

/// Which data a metrics row was measured on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Generated,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
            Split::Generated => write!(f, "generated"),
        }
    }
}

/// One row of the training metrics trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub split: Split,
    pub loss: f64,
    pub bpc: f64,
    pub kl: f64,
    pub beta: f64,
    pub p_gt: f64,
    pub level: usize,
}

/// Training state: model, parameters, level bank, tracker, pool, data.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub schema: Schema,
    pub model: RecordModel,
    pub store: ParameterStore,
    pub bank: MultiscaleBank,
    pub tracker: LatentMomentTracker,
    pub pool: Option<AugmentedPool>,
    pub step: usize,
    train_samples: Vec<Sample>,
    test_samples: Vec<Sample>,
    metrics: Vec<MetricsRow>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl Trainer {
    pub fn new(
        schema: Schema,
        cfg: TrainConfig,
        train: &[AddressRecord],
        test: &[AddressRecord],
    ) -> Result<Trainer> {
        let opts = CompileOptions {
            latent_dim: cfg.latent_dim,
            state_dim: cfg.state_dim,
            char_embed_dim: cfg.char_embed_dim,
            variant: cfg.variant,
            omit_fields: cfg.omit_fields.clone(),
        };
        let plan = compile(&schema, &opts)?;
        let vocab = build_vocab(&plan, train)?;
        Trainer::with_parts(schema, cfg, vocab, train, test)
    }

    /// Construction with an explicit vocabulary (checkpoint restore).
    pub fn with_parts(
        schema: Schema,
        cfg: TrainConfig,
        vocab: Vocab,
        train: &[AddressRecord],
        test: &[AddressRecord],
    ) -> Result<Trainer> {
        cfg.validate()?;
        let opts = CompileOptions {
            latent_dim: cfg.latent_dim,
            state_dim: cfg.state_dim,
            char_embed_dim: cfg.char_embed_dim,
            variant: cfg.variant,
            omit_fields: cfg.omit_fields.clone(),
        };
        let plan = compile(&schema, &opts)?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, INIT_STREAM));
        let model = RecordModel::build(plan, vocab, &mut store, &mut rng)?;
        let bank = multiscale_assign(&cfg, model.plan.latent_dim, &mut store, &mut rng)?;
        let tracker = LatentMomentTracker::new(model.plan.latent_dim, cfg.tracker_decay);
        let train_samples = to_samples(&model, train)?;
        let test_samples = to_samples(&model, test)?;
        Ok(Trainer {
            cfg,
            schema,
            model,
            store,
            bank,
            tracker,
            pool: None,
            step: 0,
            train_samples,
            test_samples,
            metrics: Vec::new(),
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        })
    }

    pub fn train_samples(&self) -> &[Sample] {
        &self.train_samples
    }

    pub fn test_samples(&self) -> &[Sample] {
        &self.test_samples
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn take_metrics(&mut self) -> Vec<MetricsRow> {
        std::mem::take(&mut self.metrics)
    }

    /// Effective beta of a level at a step.
    pub fn level_beta(&self, level: usize, step: usize) -> f64 {
        if self.cfg.multiscale.is_off() {
            beta_schedule(&self.cfg, step)
        } else {
            self.bank.beta(level, beta_max_schedule(&self.cfg, step))
        }
    }

    fn objective_at(&self, level: usize, step: usize) -> LevelObjective {
        LevelObjective::from_kind(
            self.bank.objective,
            self.level_beta(level, step),
            self.bank.levels[level].capacity,
        )
    }

    /// Ground-truth probabilities `(tuple, string)` at a step.
    pub fn p_gts(&self, step: usize) -> (f64, f64) {
        (
            p_gt_for(self.cfg.tuple_mode, &self.cfg, step),
            p_gt_for(self.cfg.string_mode, &self.cfg, step),
        )
    }

    fn next_batch_indices(&mut self) -> Vec<usize> {
        let n = self.train_samples.len();
        let bs = self.cfg.batch_size.min(n);
        let mut out = Vec::with_capacity(bs);
        while out.len() < bs {
            if self.cursor >= self.order.len() {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix(mix(self.cfg.seed, EPOCH_STREAM), self.epoch));
                self.epoch += 1;
                self.order = (0..n).collect();
                self.order.shuffle(&mut rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Updates the scalar module's moving statistics from a batch
    /// (training mode only; evaluation leaves statistics frozen).
    fn update_scalar_stats(&mut self, batch: &[Sample]) -> Result<()> {
        if self.model.scalar_module().is_none() {
            return Ok(());
        }
        let mut pairs = Vec::with_capacity(batch.len());
        for s in batch {
            if let Some(r) = s.as_record() {
                if let Some(p) = self.model.scalar_pair(r)? {
                    pairs.push(p);
                }
            }
        }
        if pairs.len() >= 2 {
            self.model
                .scalar_module_mut()
                .unwrap()
                .stats
                .update(&pairs)?;
        }
        Ok(())
    }

    /// Seeds uninitialized scalar statistics from the training split, for
    /// evaluation of untrained models.
    pub fn ensure_scalar_stats(&mut self) -> Result<()> {
        let needs = self
            .model
            .scalar_module()
            .map(|m| !m.stats.initialized)
            .unwrap_or(false);
        if needs {
            let all: Vec<Sample> = self.train_samples.clone();
            self.update_scalar_stats(&all)?;
        }
        Ok(())
    }

    /// One training step on the next batch: forward with the scheduled
    /// beta and sampling probabilities, backward, clip, Adam update,
    /// tracker update, and augmented-pool bookkeeping.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let step = self.step;
        let cfg_steps = self.cfg.steps;
        let level = step % self.bank.len();
        let indices = self.next_batch_indices();
        let mut batch: Vec<Sample> = indices
            .iter()
            .map(|&i| self.train_samples[i].clone())
            .collect();
        let n_real = batch.len();

        let augment_active =
            self.cfg.n_augmented > 0 && self.pool.is_some() && step > self.cfg.gen_start_step;
        if augment_active {
            let pool = self.pool.as_ref().unwrap();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix(mix(self.cfg.seed, AUGMENT_STREAM), step as u64));
            let mut variants = Vec::with_capacity(pool.len());
            for z in pool.latents() {
                let mut tape = Tape::no_grad(&self.store);
                let zn = tape.constant_vec(z.to_vec());
                variants.push(self.model.generate(
                    &mut tape,
                    zn,
                    &mut rng,
                    self.cfg.max_gen_len,
                    false,
                )?);
            }
            batch.extend(variants);
        }

        self.update_scalar_stats(&batch)?;

        let (p_gt_tuple, p_gt_string) = self.p_gts(step);
        let objective = self.objective_at(level, step);
        let settings = BatchSettings {
            objective,
            p_gt_tuple,
            p_gt_string,
            level,
            field_weights: self.cfg.field_weights.as_deref(),
            skew_in_average: self.cfg.skew_in_average,
            seed: mix(mix(self.cfg.seed, BATCH_STREAM), step as u64),
            compute_grads: true,
            parallel_chunks: self.cfg.parallel_chunks,
        };
        let out = batch_loss(
            &self.model,
            &self.store,
            &self.bank.levels[level].stddev,
            &batch,
            &settings,
        )?;

        if !out.report.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                details: format!(
                    "total={} recon={} kl={} beta={}",
                    out.report.total, out.report.recon_avg, out.report.kl, out.report.beta
                ),
            });
        }
        let mut grads = out.grads.expect("training computes gradients");
        if !grads.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                details: "non-finite gradient".into(),
            });
        }
        clip_global_norm(&mut grads, self.cfg.optimizer.clip_norm);
        adam_step(&mut self.store, &grads, step, &self.cfg.optimizer)?;

        if self.cfg.track_all_levels || level == 0 {
            self.tracker.update_batch(&out.sampled_z)?;
        }

        if self.cfg.n_augmented > 0 {
            if self.pool.is_none() && step >= self.cfg.gen_start_step {
                self.pool = Some(AugmentedPool::init(
                    &out.sampled_z,
                    self.cfg.n_augmented,
                    step,
                )?);
            } else if augment_active {
                let real_z = &out.sampled_z[..n_real];
                let variant_z = out.sampled_z[n_real..].to_vec();
                let p = self.bank.levels[level].p_sampled;
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix(mix(self.cfg.seed, POOL_STREAM), step as u64));
                self.pool
                    .as_mut()
                    .unwrap()
                    .update(real_z, &variant_z, p, step, &mut rng)?;
            }
        }

        self.step += 1;

        if step % self.cfg.log_interval == 0 || self.step == cfg_steps {
            self.metrics.push(MetricsRow {
                step,
                split: Split::Train,
                loss: out.report.total,
                bpc: out.report.bpc,
                kl: out.report.kl,
                beta: out.report.beta,
                p_gt: self.logged_p_gt(p_gt_tuple, p_gt_string),
                level,
            });
        }
        if self.step % self.cfg.eval_interval == 0 || self.step == cfg_steps {
            self.evaluate_and_log(step)?;
        }

        Ok(out.report)
    }

    fn logged_p_gt(&self, p_gt_tuple: f64, p_gt_string: f64) -> f64 {
        match self.model.plan.root {
            PlanRoot::TextLiteral => p_gt_string,
            _ => p_gt_tuple,
        }
    }

    /// Loss of arbitrary samples under the current model, no updates: the
    /// exact training code path in evaluation mode. Evaluation uses the
    /// lowest-beta level.
    pub fn eval_batch(&self, samples: &[Sample], step: usize, seed: u64) -> Result<LossReport> {
        let (p_gt_tuple, p_gt_string) = self.p_gts(step);
        let settings = BatchSettings {
            objective: self.objective_at(0, step),
            p_gt_tuple,
            p_gt_string,
            level: 0,
            field_weights: self.cfg.field_weights.as_deref(),
            skew_in_average: self.cfg.skew_in_average,
            seed,
            compute_grads: false,
            parallel_chunks: self.cfg.parallel_chunks,
        };
        Ok(batch_loss(
            &self.model,
            &self.store,
            &self.bank.levels[0].stddev,
            samples,
            &settings,
        )?
        .report)
    }

    fn evaluate_and_log(&mut self, step: usize) -> Result<()> {
        let (p_gt_tuple, p_gt_string) = self.p_gts(step);
        let p_gt = self.logged_p_gt(p_gt_tuple, p_gt_string);
        let n_eval = self.cfg.eval_samples;

        if !self.test_samples.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(
                mix(self.cfg.seed, EVAL_TEST_STREAM),
                step as u64,
            ));
            let batch: Vec<Sample> = (0..n_eval.min(self.test_samples.len()))
                .map(|_| {
                    self.test_samples[rng.gen_range(0..self.test_samples.len())].clone()
                })
                .collect();
            let report = self.eval_batch(&batch, step, mix(mix(self.cfg.seed, EVAL_TEST_STREAM), (step as u64) << 1))?;
            self.metrics.push(MetricsRow {
                step,
                split: Split::Test,
                loss: report.total,
                bpc: report.bpc,
                kl: report.kl,
                beta: report.beta,
                p_gt,
                level: 0,
            });
        }

        let gen_seed = mix(mix(self.cfg.seed, EVAL_GEN_STREAM), step as u64);
        let generated = super::eval::generate(
            &self.model,
            &self.store,
            &self.tracker,
            n_eval,
            self.cfg.max_gen_len,
            gen_seed,
        )?;
        let report = self.eval_batch(&generated, step, mix(gen_seed, 1))?;
        self.metrics.push(MetricsRow {
            step,
            split: Split::Generated,
            loss: report.total,
            bpc: report.bpc,
            kl: report.kl,
            beta: report.beta,
            p_gt,
            level: 0,
        });
        Ok(())
    }

    /// Runs the configured number of steps.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.cfg.steps {
            self.train_step()?;
        }
        Ok(())
    }
}

fn to_samples(model: &RecordModel, records: &[AddressRecord]) -> Result<Vec<Sample>> {
    match model.plan.root {
        PlanRoot::TextLiteral => records
            .iter()
            .map(|r| Ok(Sample::Line(crate::data::serialize_text(r)?)))
            .collect(),
        _ => Ok(records.iter().map(|r| Sample::Record(r.clone())).collect()),
    }
}
