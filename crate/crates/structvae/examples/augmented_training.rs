//! Augmented training: after `gen_start_step`, batches carry generated
//! variants whose latents live in a pool with mean lifetime
//! `1/p_sampled` steps.
//!
//! ```bash
//! cargo run --release --example augmented_training
//! ```

use structvae::data::{make_toy_dataset, split_8_1_1};
use structvae::schema::parse_schema;
use structvae::vae::{simulate_pool_mean_lifetime, SamplingMode, TrainConfig, Trainer};

const TOY: &str = include_str!("../schemas/toy.schema");

fn main() -> structvae::Result<()> {
    // the pool replacement law, isolated from any model
    for p in [0.125, 0.2, 0.5, 1.0] {
        let mean = simulate_pool_mean_lifetime(64, 20_000, p, 9);
        println!(
            "p_sampled {p:<5} -> mean pool-entry lifetime {mean:.3} steps (expected {:.3})",
            1.0 / p
        );
    }

    let records = make_toy_dataset(600, 6, 3)?;
    let split = split_8_1_1(records, 1);
    let cfg = TrainConfig {
        steps: 400,
        batch_size: 32,
        seed: 7,
        latent_dim: 16,
        state_dim: 16,
        char_embed_dim: 8,
        warmup_steps: 200,
        beta_start: 0.0,
        beta_mid: 0.384,
        beta_end: 0.128,
        string_mode: SamplingMode::TeacherForcing,
        tuple_mode: SamplingMode::Scheduled,
        // augmented training: 16 variants join each batch after step 100
        n_augmented: 16,
        gen_start_step: 100,
        p_sampled: 0.2,
        eval_interval: 200,
        eval_samples: 32,
        log_interval: 100,
        ..TrainConfig::default()
    };
    let schema = parse_schema(TOY)?;
    let mut trainer = Trainer::new(schema, cfg, &split.train, &split.test)?;
    for step in 0..400usize {
        let report = trainer.train_step()?;
        if step % 100 == 0 || step == 101 {
            println!(
                "step {step:>4}: batch {} (augmented: {}), loss {:.4}",
                report.batch_size,
                report.batch_size.saturating_sub(32),
                report.total
            );
        }
    }
    let pool = trainer.pool.as_ref().expect("pool initialized");
    println!(
        "pool holds {} latent vectors; oldest entry born at step {}",
        pool.len(),
        pool.entries.iter().map(|e| e.born_step).min().unwrap()
    );
    Ok(())
}
