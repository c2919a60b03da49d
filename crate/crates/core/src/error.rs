use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("support mismatch: [{0}, {1}] vs [{2}, {3}]")]
    SupportMismatch(f64, f64, f64, f64),

    #[error("invalid fusion spec: {0}")]
    InvalidFusion(String),

    #[error("fusion collects zero mass")]
    ZeroCollectedMass,

    #[error("value {value} lies outside [{lo}, {hi}]")]
    OutOfSupport { value: f64, lo: f64, hi: f64 },

    #[error("search cost must be positive, got {0}")]
    NonPositiveCost(f64),

    #[error("price must be finite and non-negative, got {0}")]
    InvalidPrice(f64),

    #[error("reservation value did not converge (residual {0:e})")]
    NoConvergence(f64),

    #[error("empty firm set")]
    EmptyFirmSet,

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("brute-force oracle needs atom-only distributions")]
    NonAtomic,

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("strategy component {component} is not a mean-preserving contraction of the prior")]
    Infeasible { component: usize },

    #[error("invalid payoff curve: {0}")]
    InvalidCurve(String),

    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("unknown case {0:?}; expected one of example1, example2, theorem1, theorem2")]
    UnknownCase(String),
}
