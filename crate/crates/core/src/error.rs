use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("integral diverges ({0})")]
    NonIntegrable(String),
    #[error("nu([{0}, 1]) is zero, nothing to sample")]
    EmptySupport(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RatesError {
    #[error("mu_threshold: measure has an atom at zero (mass {0})")]
    AtomAtZeroPresent(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LookdownError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("lookdown config: {0}")]
    Config(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("sde config: {0}")]
    Config(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DualError {
    #[error("simulate_K: up-jump rate sum does not converge at level {level}")]
    RateDivergence { level: u64 },
    #[error("dual config: {0}")]
    Config(String),
    #[error(transparent)]
    Sde(#[from] SdeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("kernel parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("replica {index}: {message}")]
    Replica { index: u64, message: String },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Rates(#[from] RatesError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Lookdown(#[from] LookdownError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}
