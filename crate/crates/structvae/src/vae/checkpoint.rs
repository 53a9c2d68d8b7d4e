//! Checkpoints: parameters, moving statistics, the latent tracker, the
//! vocabulary, and a resolved-config echo, with a schema hash guarding
//! compatibility.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::train::Trainer;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::nn::Vocab;
use crate::schema::{parse_schema, print_schema};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Canonical schema text; hash guards param compatibility.
    pub schema_text: String,
    pub schema_hash: String,
    pub step: usize,
    /// Resolved training configuration.
    pub config: TrainConfig,
    /// Ordered vocabulary bytes (EOS is implicit, one past the last).
    pub vocab_bytes: Vec<u8>,
    params: Vec<ParamRecord>,
    scalar_stats: Option<crate::nn::MovingStats>,
    tracker: super::tracker::LatentMomentTracker,
}

/// Hex SHA-256 of canonical schema text.
pub fn schema_hash(schema_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(schema_text.as_bytes());
    hex_string(&hasher.finalize())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer) -> Checkpoint {
        let schema_text = print_schema(&trainer.schema);
        let params = trainer
            .store
            .iter()
            .map(|(_, name, t)| ParamRecord {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            schema_hash: schema_hash(&schema_text),
            schema_text,
            step: trainer.step,
            config: trainer.cfg.clone(),
            vocab_bytes: trainer.model.vocab.bytes().to_vec(),
            params,
            scalar_stats: trainer.model.scalar_module().map(|m| m.stats.clone()),
            tracker: trainer.tracker.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "format version {} (expected {})",
                ckpt.format_version, FORMAT_VERSION
            )));
        }
        if ckpt.schema_hash != schema_hash(&ckpt.schema_text) {
            return Err(Error::CheckpointMismatch(
                "schema hash does not match schema text".into(),
            ));
        }
        Ok(ckpt)
    }

    /// Rebuilds a trainer around the stored parameters. The restored
    /// trainer carries no training data; attach records via the `records`
    /// arguments when continued evaluation needs them.
    pub fn restore(
        &self,
        train: &[crate::data::AddressRecord],
        test: &[crate::data::AddressRecord],
    ) -> Result<Trainer> {
        let schema = parse_schema(&self.schema_text)?;
        let mut vocab = Vocab::from_bytes(self.vocab_bytes.clone());
        vocab.rebuild_index();
        let mut trainer = Trainer::with_parts(schema, self.config.clone(), vocab, train, test)?;
        if trainer.store.len() != self.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter count {} differs from checkpoint {}",
                trainer.store.len(),
                self.params.len()
            )));
        }
        for p in &self.params {
            let id = trainer
                .store
                .lookup(&p.name)
                .ok_or_else(|| Error::UnknownParameter(p.name.clone()))?;
            trainer
                .store
                .set(id, Tensor::from_vec(&p.shape, p.data.clone()))?;
        }
        if let (Some(stats), Some(module)) =
            (self.scalar_stats.clone(), trainer.model.scalar_module_mut())
        {
            module.stats = stats;
        }
        trainer.tracker = self.tracker.clone();
        trainer.step = self.step;
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_toy_dataset;
    use crate::nn::Sample;

    #[test]
    fn checkpoint_round_trip_preserves_behavior() {
        let records = make_toy_dataset(200, 3, 21).unwrap();
        let split = crate::data::split_8_1_1(records, 5);
        let schema = crate::vae::train::tests::toy_schema();
        let cfg = crate::vae::train::tests::tiny_cfg(20);
        let mut trainer = Trainer::new(schema, cfg, &split.train, &split.test).unwrap();
        trainer.run().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::capture(&trainer).save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap().restore(&[], &[]).unwrap();

        assert_eq!(restored.step, trainer.step);
        // identical loss on an identical batch and seed
        let batch: Vec<Sample> = trainer.train_samples()[..8].to_vec();
        let a = trainer.eval_batch(&batch, trainer.step, 99).unwrap();
        let b = restored.eval_batch(&batch, trainer.step, 99).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(a.kl, b.kl);

        // identical generation
        let ga = crate::vae::eval::generate(
            &trainer.model, &trainer.store, &trainer.tracker, 8, 32, 5,
        )
        .unwrap();
        let gb = crate::vae::eval::generate(
            &restored.model, &restored.store, &restored.tracker, 8, 32, 5,
        )
        .unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn tampered_schema_hash_is_rejected() {
        let records = make_toy_dataset(100, 3, 2).unwrap();
        let schema = crate::vae::train::tests::toy_schema();
        let cfg = crate::vae::train::tests::tiny_cfg(1);
        let trainer = Trainer::new(schema, cfg, &records, &[]).unwrap();
        let mut ckpt = Checkpoint::capture(&trainer);
        ckpt.schema_hash = "deadbeef".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        ckpt.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
