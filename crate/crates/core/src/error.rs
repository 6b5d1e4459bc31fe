use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("value {0} outside the signed embedding window [-2^62, 2^62]")]
    OutOfRange(i128),
    #[error("division by zero")]
    DivisionByZero,
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is not supported by the compiled field arithmetic")]
    UnsupportedModulus(u64),
    #[error("non-canonical field encoding {0}")]
    NonCanonical(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("negative input {0}")]
    NegativeInput(i128),
    #[error("division by zero")]
    DivisionByZero,
    #[error("negative dividend {0}")]
    NegativeDividend(i128),
    #[error("invalid quantization config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value {0} exceeds the 2^62 window")]
    Overflow(i128),
    #[error("odd head dimension {0}")]
    OddHeadDim(usize),
    #[error("softmax row has no live lanes")]
    AllPadded,
    #[error("token id {0} out of range for vocabulary of {1} rows")]
    TokenOutOfRange(u32, usize),
    #[error("bad expert grouping: {0}")]
    BadGrouping(&'static str),
    #[error(transparent)]
    Fixed(#[from] FixedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitError {
    #[error("leaf index {0} out of range for {1} leaves")]
    IndexOutOfRange(usize, usize),
    #[error("merkle tree needs at least one leaf")]
    Empty,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("transcript tags must be non-empty ASCII")]
    EmptyTag,
}

/// Prover-side failures while assembling proof nodes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProveError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weight segment of {0} is not under the committed root")]
    WeightDigestMismatch(String),
    #[error("vocabulary row {0} does not match its public digest")]
    VocabDigestMismatch(u32),
    #[error("rope table row {0} does not match the committed table")]
    RopeTableDigestMismatch(u32),
    #[error("nodes cannot be merged: {0}")]
    IncompatibleNodes(String),
    #[error("constraint violated while proving: {0}")]
    ConstraintViolation(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Commit(#[from] CommitError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("weight {0} is not available")]
    MissingWeight(String),
    #[error("weight {name} has shape {got:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("commitment mismatch for {tensor} at {component}")]
    CommitmentMismatch { tensor: String, component: String },
    #[error("token list is empty")]
    EmptyInput,
    #[error("position {0} exceeds the rope table")]
    PositionOutOfRange(usize),
    #[error("weight store: {0}")]
    Store(String),
    #[error("proof container: {reason} at {at}")]
    Container { at: String, reason: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Prove(#[from] ProveError),
    #[error(transparent)]
    Commit(#[from] CommitError),
}
