//! Run configuration: a sectioned TOML file with command-line overrides,
//! strict about unknown keys, echoed next to every run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ColumnMap;
use crate::error::{Error, Result};
use crate::vae::TrainConfig;

/// Environment variable overriding the output directory (only).
pub const OUT_DIR_ENV: &str = "STRUCTVAE_OUT_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub schema: SchemaConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw CSV for `ingest`.
    pub csv: Option<PathBuf>,
    /// Line-delimited JSON cache produced by `ingest`.
    pub cache: Option<PathBuf>,
    /// Pre-split record files (the canonical inputs when available).
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    /// Seed for the 8:1:1 splitter when splitting a cache.
    pub split_seed: u64,
    pub columns: ColumnMap,
    /// Synthetic corpus for desk-scale runs, used when no files are
    /// configured.
    pub toy: Option<ToyConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_records: usize,
    pub n_zips: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_records: 1000,
            n_zips: 10,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    /// Schema file; the bundled address schema when absent.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Sample count for p-value and Levenshtein measurements.
    pub samples: usize,
    /// Encode/decode rounds for `repeat`.
    pub rounds: usize,
    /// Points for `interpolate`.
    pub interpolate_k: usize,
    /// Indices of the two interpolation endpoints in the training split.
    pub interpolate_a: usize,
    pub interpolate_b: usize,
    /// Argmax string decoding for interpolation output.
    pub argmax_interpolation: bool,
    /// Checkpoint to evaluate; `<output.dir>/checkpoint.json` when absent.
    pub checkpoint: Option<PathBuf>,
    /// Evaluation seed; derived from the training seed when absent.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 10_000,
            rounds: 10,
            interpolate_k: 20,
            interpolate_a: 0,
            interpolate_b: 1,
            argmax_interpolation: false,
            checkpoint: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/out"),
        }
    }
}

impl RunConfig {
    /// Loads a TOML config file, applies `key.path=value` overrides, and
    /// rejects unknown keys.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let base = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut value: toml::Value = toml::from_str(&base)
            .map_err(|e| Error::Toml(format!("{}: {e}", path.map(|p| p.display().to_string()).unwrap_or_default())))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let mut cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::Toml(e.to_string()))?;
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            cfg.output.dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    /// Short hex digest of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

/// Applies `a.b.c=value` onto a TOML tree. The value parses as TOML when
/// possible (numbers, booleans, inline tables) and falls back to a string.
fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(Error::Config(format!(
            "override `{assignment}` must look like section.key=value"
        )));
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let parsed: toml::Value = match format!("v = {}", raw.trim()).parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) if t.contains_key("v") => t["v"].clone(),
        _ => toml::Value::String(raw.trim().to_string()),
    };
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if !node.is_table() {
            return Err(Error::Config(format!("override key `{key}` crosses a non-table")));
        }
        node = node
            .as_table_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    match node.as_table_mut() {
        Some(t) => {
            t.insert(parts.last().unwrap().to_string(), parsed);
            Ok(())
        }
        None => Err(Error::Config(format!("override key `{key}` crosses a non-table"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_without_a_file() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.eval.samples, 10_000);
        assert_eq!(cfg.train.batch_size, 256);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "train.steps=123".into(),
                "train.seed=9".into(),
                "output.dir=/tmp/x".into(),
                "data.toy.n_records=500".into(),
                "train.string_mode=tf".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 123);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.output.dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.data.toy.unwrap().n_records, 500);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::load(None, &["train.stepz=10".into()]).unwrap_err();
        assert!(matches!(err, Error::Toml(_)), "{err:?}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[training]\nsteps = 5\n").unwrap();
        assert!(RunConfig::load(Some(&path), &[]).is_err());
    }

    #[test]
    fn config_file_round_trips_through_echo() {
        let cfg = RunConfig::load(None, &["train.steps=55".into()]).unwrap();
        let echoed = cfg.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.toml");
        std::fs::write(&path, &echoed).unwrap();
        let back = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::load(None, &[]).unwrap();
        let b = RunConfig::load(None, &["train.steps=1".into()]).unwrap();
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
