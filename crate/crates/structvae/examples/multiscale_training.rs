//! Multiscale training: several KL weights learned simultaneously, one
//! standard-deviation network per level, one level per batch.
//!
//! ```bash
//! cargo run --release --example multiscale_training
//! ```

use structvae::data::{make_toy_dataset, split_8_1_1};
use structvae::schema::parse_schema;
use structvae::vae::{multiscale_assign, MultiscaleSpec, SamplingMode, Split, TrainConfig, Trainer};

const TOY: &str = include_str!("../schemas/toy.schema");

fn main() -> structvae::Result<()> {
    // level spacing at a glance
    let show = |name: &str, spec: MultiscaleSpec| -> structvae::Result<()> {
        let cfg = TrainConfig {
            multiscale: spec,
            n_kl_weight: 8,
            latent_dim: 8,
            ..TrainConfig::default()
        };
        let mut store = structvae::diff::ParameterStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let bank = multiscale_assign(&cfg, 8, &mut store, &mut rng)?;
        let betas: Vec<String> = (0..bank.len())
            .map(|i| format!("{:.4}", bank.beta(i, 0.64)))
            .collect();
        match spec {
            MultiscaleSpec::Capacity { .. } => {
                let caps: Vec<String> = bank
                    .levels
                    .iter()
                    .map(|l| format!("{:.1}", l.capacity.unwrap()))
                    .collect();
                println!("{name}: capacities [{}]", caps.join(", "));
            }
            _ => println!("{name}: beta_i at beta_max=0.64 -> [{}]", betas.join(", ")),
        }
        Ok(())
    };
    show("linear    ", MultiscaleSpec::Linear)?;
    show("geometric ", MultiscaleSpec::Geometric { r: 0.9 })?;
    show(
        "capacity  ",
        MultiscaleSpec::Capacity {
            c_min: 10.0,
            c_increment: 0.5,
            gamma: 128.0,
        },
    )?;

    let records = make_toy_dataset(600, 6, 5)?;
    let split = split_8_1_1(records, 1);
    let cfg = TrainConfig {
        steps: 320,
        batch_size: 32,
        seed: 11,
        latent_dim: 16,
        state_dim: 16,
        char_embed_dim: 8,
        warmup_steps: 160,
        multiscale: MultiscaleSpec::Linear,
        n_kl_weight: 4,
        beta_max_start: 1.28,
        beta_max_end: 0.64,
        string_mode: SamplingMode::TeacherForcing,
        tuple_mode: SamplingMode::Scheduled,
        eval_interval: 160,
        eval_samples: 32,
        log_interval: 1,
        ..TrainConfig::default()
    };
    let schema = parse_schema(TOY)?;
    let mut trainer = Trainer::new(schema, cfg, &split.train, &split.test)?;
    trainer.run()?;

    // batches rotate through levels round-robin; each batch trains one
    // level only
    let head: Vec<(usize, usize, f64)> = trainer
        .metrics()
        .iter()
        .filter(|r| r.split == Split::Train)
        .take(8)
        .map(|r| (r.step, r.level, r.beta))
        .collect();
    println!("first batches as (step, level, beta): {head:?}");
    Ok(())
}
