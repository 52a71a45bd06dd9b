#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("too few values: need {needed}, got {actual}")]
    TooFew { needed: usize, actual: usize },
    #[error("zero-variance deltas")]
    ZeroVariance,
    #[error("zero variance")]
    ConstantInput,
    #[error("too few points: need {needed}, got {actual}")]
    TooFewPoints { needed: usize, actual: usize },
    #[error("all-zero deltas")]
    AllZero,
    #[error("invalid p-value {0}")]
    InvalidP(f64),
    #[error("invalid FDR level {0}")]
    InvalidQ(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("no paired instances")]
    NoPairs,
}
