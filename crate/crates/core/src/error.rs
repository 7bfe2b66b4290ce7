use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("map collapses distinct points {0} and {1}")]
    CollapsedPair(usize, usize),
    #[error("vertex depth {depth} exceeds max depth {max}")]
    DepthExceeded { depth: usize, max: usize },
    #[error("{what} = {value} exceeds limit {limit}")]
    TooLarge { what: &'static str, value: usize, limit: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("growth hypothesis violated at n = {0}")]
    HypothesisViolated(usize),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("chain has zero step sum, ratio undefined")]
    DegenerateChain,
    #[error("path boosting failed; best grid has T = {best_t} (needed {threshold})")]
    BoostFailed { best_t: f64, threshold: f64 },
    #[error("quadruple is not a (1+delta)-approximate 3-path")]
    NotApproximatePath,
    #[error("path length {len} is not {m} * {n}")]
    LengthMismatch { len: usize, m: usize, n: usize },
    #[error("ancestor pair ({0}, {1}) collapsed")]
    CollapsedAncestorPair(usize, usize),
    #[error("pipeline failed at stage {stage}: {detail}")]
    PipelineFailed { stage: &'static str, detail: String },
    #[error("map is not surjective: target point {0} has no preimage")]
    NotSurjective(usize),
    #[error("lifting failed: {0}")]
    LiftFailed(String),
    #[error("horizon {horizon} exceeds limit {limit}")]
    HorizonTooLong { horizon: usize, limit: usize },
    #[error("parse error: {0}")]
    Parse(String),
}
