//! Error types shared across the engine.

use thiserror::Error;

use crate::model::TypeId;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("composition has no individual of type {0}")]
    EmptyType(TypeId),
    #[error("model declares no initial individuals")]
    EmptyInitial,
    #[error("offspring vector has {got} entries, model has {expected} types")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate initial label {0}")]
    DuplicateLabel(u32),
    #[error("rate expression produced a negative value {value} for type {ty}")]
    NegativeRate { ty: TypeId, value: f64 },
    #[error("psi must be strictly positive, got {value} at type {ty}")]
    NonPositivePsi { ty: TypeId, value: f64 },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no individual alive at time {0}")]
    EmptyPopulation(f64),
    #[error("label {0} does not occur in the tree")]
    UnknownLabel(String),
    #[error("sampling weights are all zero at time {0}")]
    DegenerateWeights(f64),
    #[error("mass decoration requires a single-type kernel with only death and binary-split offspring")]
    ModelShape,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("state enumeration needs a finite capacity on the rate kernel")]
    CapacityRequired,
    #[error("state space would exceed the configured limit of {limit} states")]
    StateLimitExceeded { limit: usize },
    #[error("generator is not irreducible: no path from state {from} to state {to}")]
    NotIrreducible { from: usize, to: usize },
    #[error("power iteration did not converge within {iters} iterations (last increment {increment:e})")]
    NoConvergence { iters: u64, increment: f64 },
    #[error("matrix has no null eigenvalue: dominant shifted eigenvalue differs from the shift by {gap:e}")]
    NoNullVector { gap: f64 },
    #[error("state ({ty}, {composition}) is outside the enumerated space")]
    StateNotFound { ty: TypeId, composition: String },
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("trajectory coordinate {index} fell below the positivity floor at t={time}")]
    PositivityLoss { time: f64, index: usize },
    #[error("equilibrium residual {residual:e} exceeds tolerance {tol:e}")]
    NotAnEquilibrium { residual: f64, tol: f64 },
    #[error("thinning majorant exceeded at t={time}: actual rate {actual} > bound {bound}")]
    MajorantExceeded { time: f64, actual: f64, bound: f64 },
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {min} replicas, got {got}")]
    NotEnoughReplicas { min: u64, got: u64 },
    #[error("sample is degenerate: {0}")]
    DegenerateSample(String),
    #[error("model violates a required assumption: {0}")]
    AssumptionViolated(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    // the source is not embedded in these messages: callers that print the
    // full error chain would otherwise show it twice
    #[error("failed to parse config")]
    Parse(#[from] toml::de::Error),
    #[error("failed to read config file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
