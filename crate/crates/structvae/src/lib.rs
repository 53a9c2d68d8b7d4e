//! Schema-driven tree-recursive variational autoencoders for structured
//! records.
//!
//! The crate compiles a small protobuf-like record schema into an
//! encoder/decoder tree (shared character-RNN string module, joint
//! whitened scalar module, bidirectional-RNN tuple module), trains it as
//! a VAE with scheduled sampling, KL warm-up/cool-down, augmented
//! training, and multiscale objectives, and measures generation quality
//! with zip-coordinate p-values, Levenshtein distance, generated loss,
//! and repeated encode/decode diagnostics.
//!
//! Start with the runnable examples (`cargo run --release --example ...`)
//! or the `structvae` binary for the end-to-end pipeline.

pub mod data;
pub mod diff;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod schema;
pub mod vae;

pub use error::{Error, Result};
