use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("prompt must contain at least one token")]
    EmptyPrompt,

    #[error("token id {id} out of range for vocabulary of size {len}")]
    InvalidTokenId { id: usize, len: usize },

    #[error("vocabulary is degenerate: {0}")]
    DegenerateVocabulary(String),

    #[error("encoder transform is singular (smallest singular value {sigma_min:e})")]
    SingularEncoder { sigma_min: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bigram model has no counts")]
    EmptyCorpus,

    #[error("regret exponent must lie in (0, 1), got {0}")]
    InvalidExponent(f64),

    #[error("attack trace is degenerate: {0}")]
    DegenerateTrace(String),

    #[error("distributions do not share a support: {0}")]
    MismatchedSupport(String),

    #[error("density is not finite: {0}")]
    NonFiniteDensity(String),

    #[error("attack must run at least one iteration")]
    ZeroIterations,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("side condition violated: c_b + c_b*c2 = {lhs} exceeds omega = {omega}")]
    SideConditionViolated { lhs: f64, omega: f64 },

    #[error("bound constants unavailable: {0}")]
    ConstantsUnavailable(String),

    #[error("C1 = {0} is not positive; the bound is vacuous for this instance")]
    NonpositiveC1(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in exported records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownToken(_) => "unknown_token",
            Error::EmptyPrompt => "empty_prompt",
            Error::InvalidTokenId { .. } => "invalid_token_id",
            Error::DegenerateVocabulary(_) => "degenerate_vocabulary",
            Error::SingularEncoder { .. } => "singular_encoder",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Parse { .. } => "parse",
            Error::EmptyCorpus => "empty_corpus",
            Error::InvalidExponent(_) => "invalid_exponent",
            Error::DegenerateTrace(_) => "degenerate_trace",
            Error::MismatchedSupport(_) => "mismatched_support",
            Error::NonFiniteDensity(_) => "non_finite_density",
            Error::ZeroIterations => "zero_iterations",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::AssumptionViolated(_) => "assumption_violated",
            Error::SideConditionViolated { .. } => "side_condition_violated",
            Error::ConstantsUnavailable(_) => "constants_unavailable",
            Error::NonpositiveC1(_) => "nonpositive_c1",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
