//! Command-line surface: run configuration, command dispatch, and the
//! report files every run emits.

pub mod config;
pub mod files;
pub mod run;

pub use config::{DataConfig, EvalConfig, OutputConfig, RunConfig, SchemaConfig, ToyConfig, OUT_DIR_ENV};
pub use run::{classify_lines, run, sample_pvalue, Command, RunOutcome};
