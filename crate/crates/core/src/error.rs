use thiserror::Error;

/// Errors raised by the steering library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteerError {
    #[error("moment vector must have positive even length, got {0}")]
    InvalidLength(usize),

    #[error("moment order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    #[error("moment vector contains a non-finite entry at order {0}")]
    NonFinite(usize),

    #[error("order mismatch: expected {expected} moments, got {found}")]
    OrderMismatch { expected: usize, found: usize },

    #[error("system coefficient {value} at step {step} is outside (0, 1)")]
    InvalidCoefficient { step: usize, value: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unsupported distribution family for closed-form moments: {0}")]
    UnsupportedFamily(&'static str),

    #[error("negative even moment of order {order}: {value}")]
    NegativeEvenMoment { order: usize, value: f64 },

    #[error("empty sample list")]
    EmptySamples,

    #[error("{what} moments are not realizable (min Hankel eigenvalue {min_eigenvalue:e})")]
    NotRealizable { what: &'static str, min_eigenvalue: f64 },

    #[error("no feasible waiting time found up to step {k_max}")]
    NoFeasibleWaitingTime { k_max: usize },

    #[error("terminal control is infeasible even as the terminal weight tends to zero")]
    InfeasibleAtZero,

    #[error("no feasible starting weights at waiting time {k0}")]
    NoFeasibleStart { k0: usize },

    #[error("weights violate the monotone box at index {index}")]
    WeightsOutOfBox { index: usize },

    #[error("weight vector has length {found}, expected {expected}")]
    WeightLength { expected: usize, found: usize },

    #[error("cost weights must be nonnegative and have one entry per step: {0}")]
    InvalidCost(String),

    #[error("lambda is infeasible: 1 + G'LG = {value:e} at u = {node}")]
    InfeasibleLambda { node: f64, value: f64 },

    #[error("realization did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    MaxIterations { iterations: usize, gradient_norm: f64 },

    #[error("invalid reference density: {0}")]
    InvalidReference(String),

    #[error("negative density value {value:e} at u = {node}")]
    NegativeDensity { node: f64, value: f64 },

    #[error("proposal at u = {node} exceeds the envelope (ratio {ratio:e} > {envelope:e})")]
    EnvelopeViolation { node: f64, ratio: f64, envelope: f64 },

    #[error("length mismatch: {expected} agents but {found} control samples")]
    LengthMismatch { expected: usize, found: usize },

    #[error("ensemble must contain at least one finite position")]
    EmptyEnsemble,

    #[error("expected {expected} realized densities, got {found}")]
    DensityCount { expected: usize, found: usize },
}

impl SteerError {
    /// True for errors that mean the requested steering task is infeasible
    /// (as opposed to malformed input or numerical failure).
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            SteerError::NotRealizable { .. }
                | SteerError::NoFeasibleWaitingTime { .. }
                | SteerError::InfeasibleAtZero
                | SteerError::NoFeasibleStart { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SteerError>;
