//! Verify the reverse-mode gradients of a full VAE loss against central
//! finite differences at reduced dimensions.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use structvae::data::make_toy_dataset;
use structvae::diff::gradcheck::{compare_gradients, DEFAULT_STEP};
use structvae::diff::{ParameterStore, Tape};
use structvae::nn::{build_stddev, build_vocab, RecordModel, Sample};
use structvae::schema::{compile, parse_schema, CompileOptions, Variant};
use structvae::vae::{kl_diag_gaussian, reparameterize};

const TOY: &str = include_str!("../schemas/toy.schema");

fn main() -> structvae::Result<()> {
    let schema = parse_schema(TOY)?;
    let opts = CompileOptions {
        latent_dim: 4,
        state_dim: 8,
        char_embed_dim: 4,
        variant: Variant::Tuple,
        omit_fields: vec![],
    };
    let plan = compile(&schema, &opts)?;
    let records = make_toy_dataset(50, 3, 7)?;
    let vocab = build_vocab(&plan, &records)?;

    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = RecordModel::build(plan, vocab, &mut store, &mut rng)?;
    let stddev = build_stddev(&mut store, 0, model.plan.latent_dim, &mut rng)?;
    let pairs: Vec<[f64; 2]> = records.iter().map(|r| [r.lat, r.long]).collect();
    model.scalar_module_mut().unwrap().stats.update(&pairs)?;

    let sample = Sample::Record(records[0].clone());
    println!(
        "checking d(total)/d(theta) for {} parameters ({} scalars)",
        store.len(),
        store.scalar_count()
    );

    // teacher forcing and a fixed noise stream keep the loss smooth in
    // the parameters, which central differences require
    let run = |store: &ParameterStore| -> structvae::Result<(f64, structvae::diff::Gradients)> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new(store);
        let targets = model.prepare(&sample)?;
        let enc = model.encode(&mut tape, &targets)?;
        let sigma = stddev.forward(&mut tape, enc.mu)?;
        let z = reparameterize(&mut tape, enc.mu, sigma, &mut rng)?;
        let loss =
            model.decode_loss(&mut tape, z, &enc, &targets, 1.0, 1.0, &mut rng, None, true)?;
        let kl = kl_diag_gaussian(&mut tape, enc.mu, sigma)?;
        let beta = 0.25;
        let d = model.plan.latent_dim as f64;
        let total = tape.weighted_sum(vec![(loss.recon_avg, 1.0), (kl, beta / d)])?;
        let v = tape.value(total).item();
        let g = tape.backward(total)?;
        Ok((v, g))
    };

    let (loss, grads) = run(&store)?;
    println!("loss at the checked point: {loss:.6}");
    let report = compare_gradients(&mut store, &grads, DEFAULT_STEP, |s| {
        run(s).map(|(v, _)| v)
    })?;
    println!(
        "checked {} components, max relative error {:.3e} (threshold 1e-4)",
        report.components_checked, report.max_rel_error
    );
    if let Some((name, idx)) = &report.worst {
        println!("worst component: {name}[{idx}]");
    }
    assert!(report.max_rel_error <= 1e-4);
    println!("gradients agree with finite differences");
    Ok(())
}
