//! Encoder/decoder modules: the GRU variant, string sequence module,
//! joint scalar module, tuple modules, and the standard-deviation
//! network, plus the plan-to-model assembler.

pub mod gru;
pub mod model;
pub mod scalar_tuple;
pub mod stddev;
pub mod string_literal;
pub mod tuple;
pub mod vocab;

pub use gru::{gru_step, GruCell};
pub use model::{build_stddev, build_vocab, Encoded, RecordLoss, RecordModel, Sample, SampleTargets};
pub use scalar_tuple::{MovingStats, ScalarTupleModule, WhitenFactors};
pub use stddev::StdDevNetwork;
pub use string_literal::{sample_softmax, StringLiteralModule, StringLoss};
pub use tuple::{SimpleTupleModule, TupleModule};
pub use vocab::Vocab;
