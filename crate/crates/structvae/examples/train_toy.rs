//! Train a small tree-recursive VAE on the synthetic corpus and print
//! the loss/BPC trace for the train, test, and generated splits.
//!
//! ```bash
//! cargo run --release --example train_toy
//! ```

use structvae::data::{make_toy_dataset, split_8_1_1};
use structvae::schema::parse_schema;
use structvae::vae::{SamplingMode, Split, TrainConfig, Trainer};

const TOY: &str = include_str!("../schemas/toy.schema");

fn main() -> structvae::Result<()> {
    let records = make_toy_dataset(1000, 10, 17)?;
    let split = split_8_1_1(records, 1);
    println!(
        "toy corpus: {} train / {} test records over 10 zips",
        split.train.len(),
        split.test.len()
    );

    let cfg = TrainConfig {
        steps: 600,
        batch_size: 32,
        seed: 42,
        latent_dim: 16,
        state_dim: 16,
        char_embed_dim: 8,
        warmup_steps: 300,
        beta_start: 0.0,
        beta_mid: 0.384,
        beta_end: 0.128,
        string_mode: SamplingMode::TeacherForcing,
        tuple_mode: SamplingMode::Scheduled,
        eval_interval: 200,
        eval_samples: 64,
        log_interval: 100,
        ..TrainConfig::default()
    };
    let schema = parse_schema(TOY)?;
    let mut trainer = Trainer::new(schema, cfg, &split.train, &split.test)?;
    trainer.run()?;

    println!("step  split      loss     bpc      kl    beta  p_gt");
    for row in trainer.metrics() {
        println!(
            "{:>5} {:<9} {:>7.4} {:>7.4} {:>7.3} {:>6.3} {:>5.2}",
            row.step, row.split.to_string(), row.loss, row.bpc, row.kl, row.beta, row.p_gt
        );
    }

    let first = trainer
        .metrics()
        .iter()
        .find(|r| r.split == Split::Train)
        .unwrap()
        .loss;
    let last = trainer
        .metrics()
        .iter()
        .rev()
        .find(|r| r.split == Split::Train)
        .unwrap()
        .loss;
    println!("train loss {first:.4} -> {last:.4}");
    Ok(())
}
