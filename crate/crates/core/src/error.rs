use alloc::string::String;

/// Precondition failures of the metric functions.
///
/// Degenerate inputs that the batch pipeline tolerates (all-zero vectors,
/// zero total energy) are not errors; those functions return `None` and the
/// caller counts the flag.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("too few layers: {0} (need at least 3)")]
    TooFewLayers(u32),
    #[error("layer not sampled: {0}")]
    LayerNotSampled(u32),
    #[error("token position not sampled: {0}")]
    PositionNotSampled(u32),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("keyword position {0} is not visible")]
    KeywordNotVisible(u32),
    #[error("no visible attention mass")]
    NoVisibleMass,
    #[error("invalid distribution")]
    InvalidDistribution,
    #[error("empty generation")]
    EmptyGeneration,
    #[error("generation has neither token entropies nor distributions")]
    MissingEntropyData,
    #[error("degenerate embedding")]
    DegenerateEmbedding,
    #[error("need at least {needed} samples, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },
    #[error("unknown gold option `{0}`")]
    UnknownGoldOption(String),
}
