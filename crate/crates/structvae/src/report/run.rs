//! Command dispatch: ingestion, statistics, training, generation,
//! evaluation, repeated encode/decode, and interpolation, each writing
//! its declared artifacts into the run directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde_json::json;

use super::config::RunConfig;
use super::files;
use crate::data::{
    make_toy_dataset, parse_csv, read_ldjson, split_8_1_1, street_name_set, write_ldjson,
    AddressRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{
    fit_zip_stats, malformed_check, mean_levenshtein_per_char, pvalue_stats, record_pvalue,
    street_name_membership, summarize_pvalues, MalformedReason, TextLine, ZipStatsTable,
};
use crate::nn::Sample;
use crate::schema::{parse_schema, Schema, ADDRESS_SCHEMA};
use crate::vae::{self, Checkpoint, Trainer};

/// CLI subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Stats,
    Train,
    Generate,
    Eval,
    Repeat,
    Interpolate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Eval => "eval",
            Command::Repeat => "repeat",
            Command::Interpolate => "interpolate",
        }
    }

    /// Artifacts the command writes into the run directory (beyond the
    /// resolved-config echo).
    fn artifacts(&self) -> &'static [&'static str] {
        match self {
            Command::Ingest => &[
                "records.ldjson",
                "train.ldjson",
                "test.ldjson",
                "validation.ldjson",
                "ingest.json",
            ],
            Command::Stats => &["stats.json"],
            Command::Train => &["metrics.csv", "checkpoint.json", "train.json"],
            Command::Generate => &["generated.ldjson", "generate.json"],
            Command::Eval => &["eval.json", "pvalues.csv"],
            Command::Repeat => &[
                "repeat_boxplot.csv",
                "repeat_pvalues.csv",
                "repeat_membership.csv",
                "repeat.json",
            ],
            Command::Interpolate => &["interpolation.geojson"],
        }
    }
}

/// Files written by a successful run.
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
}

/// Runs one command against a resolved configuration.
pub fn run(command: Command, cfg: &RunConfig, force: bool) -> Result<RunOutcome> {
    let out_dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&out_dir)?;

    let echo_name = format!("{}.config.toml", command.name());
    let mut declared: Vec<PathBuf> = vec![out_dir.join(&echo_name)];
    declared.extend(command.artifacts().iter().map(|f| out_dir.join(f)));
    if !force {
        if let Some(existing) = declared.iter().find(|p| p.exists()) {
            return Err(Error::OutputDirOccupied(existing.display().to_string()));
        }
    }
    std::fs::write(out_dir.join(&echo_name), cfg.to_toml()?)?;
    let hash = cfg.hash()?;

    let files = match command {
        Command::Ingest => run_ingest(cfg, &out_dir, &hash)?,
        Command::Stats => run_stats(cfg, &out_dir, &hash)?,
        Command::Train => run_train(cfg, &out_dir, &hash)?,
        Command::Generate => run_generate(cfg, &out_dir, &hash)?,
        Command::Eval => run_eval(cfg, &out_dir, &hash)?,
        Command::Repeat => run_repeat(cfg, &out_dir, &hash)?,
        Command::Interpolate => run_interpolate(cfg, &out_dir, &hash)?,
    };
    let mut all = vec![out_dir.join(&echo_name)];
    all.extend(files);
    Ok(RunOutcome { files: all })
}

fn load_schema(cfg: &RunConfig) -> Result<Schema> {
    match &cfg.schema.path {
        Some(p) => parse_schema(&std::fs::read_to_string(p)?),
        None => parse_schema(ADDRESS_SCHEMA),
    }
}

/// Training and test records per the data section: explicit pre-split
/// files first, then a cache split 8:1:1, then the synthetic toy corpus.
fn load_train_test(cfg: &RunConfig) -> Result<(Vec<AddressRecord>, Vec<AddressRecord>)> {
    if let Some(train_path) = &cfg.data.train {
        let train = read_ldjson(train_path)?;
        let test = match &cfg.data.test {
            Some(p) => read_ldjson(p)?,
            None => Vec::new(),
        };
        return Ok((train, test));
    }
    if let Some(cache) = &cfg.data.cache {
        let split = split_8_1_1(read_ldjson(cache)?, cfg.data.split_seed);
        return Ok((split.train, split.test));
    }
    if let Some(toy) = &cfg.data.toy {
        let split = split_8_1_1(
            make_toy_dataset(toy.n_records, toy.n_zips, toy.seed)?,
            cfg.data.split_seed,
        );
        return Ok((split.train, split.test));
    }
    Err(Error::MissingInput(
        "data.train, data.cache, or data.toy must be configured".into(),
    ))
}

fn checkpoint_path(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    cfg.eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| out_dir.join("checkpoint.json"))
}

fn load_trainer(cfg: &RunConfig, out_dir: &Path) -> Result<Trainer> {
    let path = checkpoint_path(cfg, out_dir);
    if !path.exists() {
        return Err(Error::MissingInput(format!(
            "missing checkpoint {}; run `train` first or set eval.checkpoint",
            path.display()
        )));
    }
    let (train, test) = load_train_test(cfg)?;
    let mut trainer = Checkpoint::load(&path)?.restore(&train, &test)?;
    trainer.ensure_scalar_stats()?;
    Ok(trainer)
}

fn eval_seed(cfg: &RunConfig) -> u64 {
    cfg.eval.seed.unwrap_or(cfg.train.seed.wrapping_add(0x5eed))
}

fn run_ingest(cfg: &RunConfig, out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let csv = cfg
        .data
        .csv
        .as_ref()
        .ok_or_else(|| Error::MissingInput("data.csv is required for ingest".into()))?;
    let parsed = parse_csv(csv, &cfg.data.columns)?;
    let cache_path = out_dir.join("records.ldjson");
    write_ldjson(&cache_path, &parsed.records)?;
    let split = split_8_1_1(parsed.records, cfg.data.split_seed);
    let train_path = out_dir.join("train.ldjson");
    let test_path = out_dir.join("test.ldjson");
    let val_path = out_dir.join("validation.ldjson");
    write_ldjson(&train_path, &split.train)?;
    write_ldjson(&test_path, &split.test)?;
    write_ldjson(&val_path, &split.validation)?;
    let summary_path = out_dir.join("ingest.json");
    files::write_json_report(
        &summary_path,
        hash,
        &json!({
            "source": csv.display().to_string(),
            "rows": split.train.len() + split.test.len() + split.validation.len(),
            "skipped_rows": parsed.skipped_rows,
            "train": split.train.len(),
            "test": split.test.len(),
            "validation": split.validation.len(),
            "split_seed": cfg.data.split_seed,
        }),
    )?;
    Ok(vec![cache_path, train_path, test_path, val_path, summary_path])
}

fn run_stats(cfg: &RunConfig, out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let (train, _) = load_train_test(cfg)?;
    let table = fit_zip_stats(&train);
    let stats = pvalue_stats(&train, &table);
    let path = out_dir.join("stats.json");
    files::write_json_report(
        &path,
        hash,
        &json!({
            "records": train.len(),
            "zips": table.entries.len(),
            "dropped_small_zips": table.dropped_small,
            "pvalue_self_test": {
                "mean": stats.mean,
                "median": stats.median,
                "stddev": stats.stddev,
                "count": stats.count,
            },
        }),
    )?;
    Ok(vec![path])
}

fn run_train(cfg: &RunConfig, out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let schema = load_schema(cfg)?;
    let (train, test) = load_train_test(cfg)?;
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(schema, cfg.train.clone(), &train, &test)?;
    trainer.run()?;

    let metrics_path = out_dir.join("metrics.csv");
    files::write_metrics_csv(&metrics_path, hash, trainer.metrics())?;
    let ckpt_path = out_dir.join("checkpoint.json");
    Checkpoint::capture(&trainer).save(&ckpt_path)?;

    let last = |split: vae::Split| {
        trainer
            .metrics()
            .iter()
            .rev()
            .find(|r| r.split == split)
            .map(|r| r.loss)
    };
    let summary_path = out_dir.join("train.json");
    files::write_json_report(
        &summary_path,
        hash,
        &json!({
            "steps": trainer.step,
            "train_records": train.len(),
            "test_records": test.len(),
            "parameters": trainer.store.scalar_count(),
            "final_train_loss": last(vae::Split::Train),
            "final_test_loss": last(vae::Split::Test),
            "final_generated_loss": last(vae::Split::Generated),
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(vec![metrics_path, ckpt_path, summary_path])
}

fn run_generate(cfg: &RunConfig, out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let trainer = load_trainer(cfg, out_dir)?;
    let samples = vae::generate(
        &trainer.model,
        &trainer.store,
        &trainer.tracker,
        cfg.eval.samples,
        cfg.train.max_gen_len,
        eval_seed(cfg),
    )?;
    let path = out_dir.join("generated.ldjson");
    files::write_samples_ldjson(&path, &samples)?;

    let malformed = samples
        .iter()
        .filter(|s| matches!(s, Sample::Line(l) if matches!(malformed_check(l), TextLine::Malformed(_))))
        .count();
    let summary = out_dir.join("generate.json");
    files::write_json_report(
        &summary,
        hash,
        &json!({
            "samples": samples.len(),
            "malformed": malformed,
            "checkpoint_step": trainer.step,
        }),
    )?;
    Ok(vec![path, summary])
}

/// P-value of a generated sample: records score against the zip table,
/// text lines are parsed first and malformed ones score 0.
pub fn sample_pvalue(sample: &Sample, table: &ZipStatsTable) -> f64 {
    match sample {
        Sample::Record(r) => record_pvalue(r, table),
        Sample::Line(l) => match malformed_check(l) {
            TextLine::Record(r) => record_pvalue(&r, table),
            TextLine::Malformed(_) => 0.0,
        },
    }
}

fn sample_street(sample: &Sample) -> Option<String> {
    match sample {
        Sample::Record(r) => Some(r.street.clone()),
        Sample::Line(l) => match malformed_check(l) {
            TextLine::Record(r) => Some(r.street),
            TextLine::Malformed(_) => None,
        },
    }
}

fn run_eval(cfg: &RunConfig, out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let trainer = load_trainer(cfg, out_dir)?;
    let (train, _) = load_train_test(cfg)?;
    if train.is_empty() {
        return Err(Error::MissingInput(
            "eval needs training records for the zip table".into(),
        ));
    }
    let table = fit_zip_stats(&train);
    let seed = eval_seed(cfg);

    // generated samples and their p-values
    let generated = vae::generate(
        &trainer.model,
        &trainer.store,
        &trainer.tracker,
        cfg.eval.samples,
        cfg.train.max_gen_len,
        seed,
    )?;
    let pvalues: Vec<f64> = generated.iter().map(|s| sample_pvalue(s, &table)).collect();
    let stats = summarize_pvalues(&pvalues);
    let malformed = generated
        .iter()
        .filter(|s| matches!(s, Sample::Line(l) if matches!(malformed_check(l), TextLine::Malformed(_))))
        .count();

    // street-name membership of generated samples
    let streets = street_name_set(&train);
    let generated_records: Vec<AddressRecord> = generated
        .iter()
        .filter_map(|s| {
            sample_street(s).map(|street| AddressRecord {
                street,
                ..Default::default()
            })
        })
        .collect();
    let (member_count, member_prop) = street_name_membership(&generated_records, &streets);

    // Levenshtein per character between originals and reconstructions
    // g(mu(x)) over randomly selected training examples
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let n_lev = cfg.eval.samples.min(trainer.train_samples().len());
    let picks: Vec<usize> = rand::seq::index::sample(
        &mut rng,
        trainer.train_samples().len(),
        n_lev,
    )
    .into_vec();
    let originals: Vec<Sample> = picks
        .iter()
        .map(|&i| trainer.train_samples()[i].clone())
        .collect();
    let rounds = vae::repeated_encode_decode(
        &trainer.model,
        &trainer.store,
        &originals,
        2,
        cfg.train.max_gen_len,
        seed.wrapping_add(2),
    )?;
    let pairs: Vec<(String, String)> = originals
        .iter()
        .zip(&rounds[1])
        .filter_map(|(orig, recon)| {
            let o = sample_street(orig)?;
            let r = sample_street(recon).unwrap_or_default();
            Some((o, r))
        })
        .collect();
    let (lev_mean, lev_used, lev_skipped) =
        mean_levenshtein_per_char(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())));

    // loss reports on test and generated data, identical code path
    let step = trainer.step.saturating_sub(1);
    let test_report = if trainer.test_samples().is_empty() {
        None
    } else {
        let n = cfg.eval.samples.min(trainer.test_samples().len());
        Some(trainer.eval_batch(&trainer.test_samples()[..n], step, seed.wrapping_add(3))?)
    };
    let gen_report = trainer.eval_batch(&generated, step, seed.wrapping_add(4))?;

    let pvalues_path = out_dir.join("pvalues.csv");
    let rows: Vec<(String, usize, usize, f64)> = pvalues
        .iter()
        .enumerate()
        .map(|(i, p)| ("generated".to_string(), 0, i, *p))
        .collect();
    files::write_pvalues_csv(&pvalues_path, hash, &rows)?;

    let report_path = out_dir.join("eval.json");
    files::write_json_report(
        &report_path,
        hash,
        &json!({
            "checkpoint_step": trainer.step,
            "samples": generated.len(),
            "pvalues": {
                "mean": stats.mean,
                "median": stats.median,
                "stddev": stats.stddev,
                "count": stats.count,
            },
            "malformed": malformed,
            "street_membership": {
                "count": member_count,
                "proportion": member_prop,
            },
            "levenshtein_per_char": {
                "mean": lev_mean,
                "pairs": lev_used,
                "skipped_empty": lev_skipped,
            },
            "generated_loss": gen_report,
            "test_loss": test_report,
        }),
    )?;
    Ok(vec![report_path, pvalues_path])
}

fn run_repeat(cfg: &RunConfig, out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let trainer = load_trainer(cfg, out_dir)?;
    let (train, _) = load_train_test(cfg)?;
    let table = fit_zip_stats(&train);
    let streets = street_name_set(&train);
    let seed = eval_seed(cfg);
    let n = cfg.eval.samples;
    let rounds = cfg.eval.rounds;

    let generated = vae::generate(
        &trainer.model,
        &trainer.store,
        &trainer.tracker,
        n,
        cfg.train.max_gen_len,
        seed,
    )?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let n_train = n.min(trainer.train_samples().len());
    let picks: Vec<usize> =
        rand::seq::index::sample(&mut rng, trainer.train_samples().len(), n_train).into_vec();
    let train_inputs: Vec<Sample> = picks
        .iter()
        .map(|&i| trainer.train_samples()[i].clone())
        .collect();

    let mut boxplot_rows = Vec::new();
    let mut pvalue_rows = Vec::new();
    let mut membership_rows = Vec::new();
    for (source, inputs) in [("generated", &generated), ("reconstructed", &train_inputs)] {
        let sequence = vae::repeated_encode_decode(
            &trainer.model,
            &trainer.store,
            inputs,
            rounds,
            cfg.train.max_gen_len,
            seed.wrapping_add(7),
        )?;
        for (round, batch) in sequence.iter().enumerate() {
            let pvalues: Vec<f64> = batch.iter().map(|s| sample_pvalue(s, &table)).collect();
            boxplot_rows.push(files::BoxplotRow::from_pvalues(source, round, &pvalues));
            for (i, p) in pvalues.iter().enumerate() {
                pvalue_rows.push((source.to_string(), round, i, *p));
            }
            let records: Vec<AddressRecord> = batch
                .iter()
                .filter_map(|s| {
                    sample_street(s).map(|street| AddressRecord {
                        street,
                        ..Default::default()
                    })
                })
                .collect();
            let (count, prop) = street_name_membership(&records, &streets);
            membership_rows.push((source.to_string(), round, count, prop));
        }
    }

    let boxplot_path = out_dir.join("repeat_boxplot.csv");
    files::write_boxplot_csv(&boxplot_path, hash, &boxplot_rows)?;
    let pvalues_path = out_dir.join("repeat_pvalues.csv");
    files::write_pvalues_csv(&pvalues_path, hash, &pvalue_rows)?;
    let membership_path = out_dir.join("repeat_membership.csv");
    files::write_membership_csv(&membership_path, hash, &membership_rows)?;
    let summary_path = out_dir.join("repeat.json");
    files::write_json_report(
        &summary_path,
        hash,
        &json!({
            "rounds": rounds,
            "generated": generated.len(),
            "reconstructed": train_inputs.len(),
        }),
    )?;
    Ok(vec![boxplot_path, pvalues_path, membership_path, summary_path])
}

fn run_interpolate(cfg: &RunConfig, out_dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let trainer = load_trainer(cfg, out_dir)?;
    let samples = trainer.train_samples();
    let (ia, ib) = (cfg.eval.interpolate_a, cfg.eval.interpolate_b);
    if ia >= samples.len() || ib >= samples.len() {
        return Err(Error::Config(format!(
            "interpolation endpoints ({ia}, {ib}) out of range for {} training samples",
            samples.len()
        )));
    }
    let points = vae::interpolate(
        &trainer.model,
        &trainer.store,
        &samples[ia],
        &samples[ib],
        cfg.eval.interpolate_k,
        cfg.train.max_gen_len,
        eval_seed(cfg),
        cfg.eval.argmax_interpolation,
    )?;
    let path = out_dir.join("interpolation.geojson");
    files::write_interpolation_geojson(&path, hash, &points)?;
    Ok(vec![path])
}

/// Classifies text lines for the malformedness report. Exposed for the
/// text-variant diagnostics.
pub fn classify_lines<'a>(
    lines: impl Iterator<Item = &'a str>,
) -> (usize, usize, usize) {
    let mut ok = 0;
    let mut too_few = 0;
    let mut bad_float = 0;
    for line in lines {
        match malformed_check(line) {
            TextLine::Record(_) => ok += 1,
            TextLine::Malformed(MalformedReason::TooFewFields) => too_few += 1,
            TextLine::Malformed(MalformedReason::BadFloat) => bad_float += 1,
        }
    }
    (ok, too_few, bad_float)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::config::{RunConfig, ToyConfig};

    fn toy_run_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.toy = Some(ToyConfig {
            n_records: 200,
            n_zips: 3,
            seed: 5,
        });
        cfg.schema.path = None;
        cfg.train.steps = 30;
        cfg.train.batch_size = 8;
        cfg.train.latent_dim = 8;
        cfg.train.state_dim = 8;
        cfg.train.char_embed_dim = 4;
        cfg.train.warmup_steps = 15;
        cfg.train.eval_interval = 15;
        cfg.train.eval_samples = 8;
        cfg.train.log_interval = 10;
        cfg.train.parallel_chunks = 2;
        cfg.eval.samples = 12;
        cfg.eval.rounds = 3;
        cfg.eval.interpolate_k = 4;
        cfg.output.dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn full_pipeline_through_the_report_layer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_run_config(dir.path());

        let out = run(Command::Train, &cfg, false).unwrap();
        assert!(out.files.iter().any(|f| f.ends_with("metrics.csv")));
        let (hash, rows) = files::read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(hash, cfg.hash().unwrap());
        assert!(!rows.is_empty());

        // rerun refuses without force
        assert!(matches!(
            run(Command::Train, &cfg, false),
            Err(Error::OutputDirOccupied(_))
        ));
        run(Command::Train, &cfg, true).unwrap();

        run(Command::Stats, &cfg, false).unwrap();
        let stats = files::read_json_report(&dir.path().join("stats.json")).unwrap();
        assert!(stats["pvalue_self_test"]["mean"].as_f64().unwrap() > 0.0);

        run(Command::Generate, &cfg, false).unwrap();
        let samples = files::read_samples_ldjson(&dir.path().join("generated.ldjson")).unwrap();
        assert_eq!(samples.len(), 12);

        run(Command::Eval, &cfg, false).unwrap();
        let eval = files::read_json_report(&dir.path().join("eval.json")).unwrap();
        assert!(eval["pvalues"]["mean"].as_f64().is_some());
        assert!(eval["generated_loss"]["total"].as_f64().unwrap().is_finite());

        run(Command::Repeat, &cfg, false).unwrap();
        let (_, box_rows) =
            files::read_boxplot_csv(&dir.path().join("repeat_boxplot.csv")).unwrap();
        // 2 sources x 3 rounds
        assert_eq!(box_rows.len(), 6);

        run(Command::Interpolate, &cfg, false).unwrap();
        let geo = files::read_json_report(&dir.path().join("interpolation.geojson")).unwrap();
        assert_eq!(geo["features"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn eval_without_checkpoint_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_run_config(dir.path());
        let err = run(Command::Eval, &cfg, false).unwrap_err();
        assert!(matches!(err, Error::MissingInput(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn ingest_round_trips_through_csv_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("raw.csv");
        let records = crate::data::make_toy_dataset(120, 3, 9).unwrap();
        crate::data::write_csv(&csv_path, &crate::data::ColumnMap::default(), &records).unwrap();

        let mut cfg = toy_run_config(&dir.path().join("out"));
        cfg.data.csv = Some(csv_path);
        cfg.data.toy = None;
        let out = run(Command::Ingest, &cfg, false).unwrap();
        assert!(out.files.iter().any(|f| f.ends_with("records.ldjson")));
        let cached = read_ldjson(&dir.path().join("out/records.ldjson")).unwrap();
        assert_eq!(cached.len(), 120);
        let summary = files::read_json_report(&dir.path().join("out/ingest.json")).unwrap();
        assert_eq!(summary["rows"], 120);
        assert_eq!(summary["skipped_rows"], 0);
    }

    #[test]
    fn train_with_zero_steps_checkpoints_the_initialized_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_run_config(dir.path());
        cfg.train.steps = 0;
        cfg.train.warmup_steps = 0;
        run(Command::Train, &cfg, false).unwrap();
        assert!(dir.path().join("checkpoint.json").exists());
        // the untrained checkpoint still generates (prior latents,
        // statistics seeded from the training split)
        run(Command::Generate, &cfg, false).unwrap();
        let samples = files::read_samples_ldjson(&dir.path().join("generated.ldjson")).unwrap();
        assert_eq!(samples.len(), 12);
    }
}
