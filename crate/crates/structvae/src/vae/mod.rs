//! VAE objective, schedules, training loop, augmented and multiscale
//! training, generation, and evaluation diagnostics.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod loss;
pub mod multiscale;
pub mod schedule;
pub mod tracker;
pub mod train;

pub use augment::{simulate_pool_mean_lifetime, AugmentedPool};
pub use checkpoint::{schema_hash, Checkpoint};
pub use config::{MultiscaleSpec, PSpacing, SamplingMode, TrainConfig};
pub use eval::{generate, interpolate, repeated_encode_decode, InterpolationPoint};
pub use loss::{
    batch_loss, kl_diag_gaussian, kl_diag_value, reparameterize, BatchOutput, BatchSettings,
    LevelObjective, LossReport,
};
pub use multiscale::{multiscale_assign, MultiscaleBank, ObjectiveKind};
pub use schedule::{beta_max_schedule, beta_schedule, p_gt_for, ss_schedule};
pub use tracker::LatentMomentTracker;
pub use train::{MetricsRow, Split, Trainer};
