//! Linear and bilinear-pool LSTMs compared at equal learnable-parameter
//! budgets, with two self-contained sequence benchmarks (Gaussian
//! conditional expectation and propositional-logic relations), a training
//! engine with split learning rates and gradient telemetry, and the
//! bilinear:linear activation-ratio analysis.

pub mod analysis;
pub mod cells;
pub mod cli;
pub mod gauss;
pub mod logic;
pub mod numeric;
pub mod training;
pub(crate) mod util;

pub use numeric::{GroupKind, ParamSet, RngStream, Tensor};

/// Tool version embedded in every output artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
