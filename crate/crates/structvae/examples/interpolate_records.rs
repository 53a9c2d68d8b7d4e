//! Interpolate between two training examples in latent space and emit
//! the decoded path as a GeoJSON FeatureCollection.
//!
//! ```bash
//! cargo run --release --example interpolate_records
//! ```

use structvae::data::{make_toy_dataset, split_8_1_1};
use structvae::report::files::write_interpolation_geojson;
use structvae::schema::parse_schema;
use structvae::vae::{interpolate, SamplingMode, TrainConfig, Trainer};

const TOY: &str = include_str!("../schemas/toy.schema");

fn main() -> structvae::Result<()> {
    let records = make_toy_dataset(800, 8, 31)?;
    let split = split_8_1_1(records, 1);
    let cfg = TrainConfig {
        steps: 1000,
        batch_size: 32,
        seed: 21,
        latent_dim: 16,
        state_dim: 16,
        char_embed_dim: 8,
        warmup_steps: 500,
        beta_start: 0.0,
        beta_mid: 0.384,
        beta_end: 0.128,
        string_mode: SamplingMode::TeacherForcing,
        tuple_mode: SamplingMode::Scheduled,
        eval_interval: 500,
        eval_samples: 32,
        log_interval: 250,
        ..TrainConfig::default()
    };
    let schema = parse_schema(TOY)?;
    let mut trainer = Trainer::new(schema, cfg, &split.train, &split.test)?;
    trainer.run()?;

    let a = &trainer.train_samples()[0];
    let b = &trainer.train_samples()[1];
    println!("endpoints:");
    for s in [a, b] {
        let r = s.as_record().unwrap();
        println!("  {} | {} | ({:.5}, {:.5})", r.street, r.postcode, r.lat, r.long);
    }

    let points = interpolate(&trainer.model, &trainer.store, a, b, 11, 64, 9, false)?;
    println!("lambda  street            postcode  lat        long");
    for p in &points {
        let r = p.sample.as_record().unwrap();
        println!(
            "{:>6.2}  {:<16}  {:<8}  {:>9.5}  {:>10.5}",
            p.lambda, r.street, r.postcode, r.lat, r.long
        );
    }

    let out = std::env::temp_dir().join("structvae_interpolation.geojson");
    write_interpolation_geojson(&out, "example", &points)?;
    println!("GeoJSON written to {}", out.display());
    Ok(())
}
