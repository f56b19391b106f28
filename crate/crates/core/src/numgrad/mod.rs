//! Dense rank-1/rank-2 tensors, a reverse-mode tape, named parameter sets,
//! plain SGD and a finite-difference gradient checker.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{grad_check, relative_error, GradCheck};
pub use params::{sgd_step, ParamSet};
pub use tape::{Adjoints, Tape, Var};
pub use tensor::{elementwise, hadamard, matvec, softmax, Activation, Shape, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The seedable generator used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Default half-width of the uniform parameter initialisation.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dim {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op} expects a vector, got {shape}")]
    Rank { op: &'static str, shape: Shape },
    #[error("{op}: index {index} out of range for {shape}")]
    Index {
        op: &'static str,
        index: usize,
        shape: Shape,
    },
    #[error("shape {shape} needs {} values, found {found}", shape.len())]
    ValueCount { shape: Shape, found: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got {0}")]
    NotScalar(Shape),
    #[error("loss was not recorded on this tape")]
    LossNotOnTape,
    #[error("variable belongs to another tape")]
    ForeignVar,
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter sets differ: {0}")]
    KeyMismatch(String),
    #[error("function is not deterministic: two evaluations at the same point disagree")]
    NonDeterministic,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, NumError>;
