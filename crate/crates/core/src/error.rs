use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the covariate box")]
    OutOfDomain { point: Vec<f64> },

    #[error("invalid covariate space: {0}")]
    InvalidSpace(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite model output at {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("non-finite gradient at sample {index}")]
    NonFiniteScore { index: usize },

    #[error("sample variance needs at least two samples, got {0}")]
    TooFewSamples(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("group s={group} contains a single treatment class; the logistic fit separates (try a larger --reg)")]
    Separation { group: usize },

    #[error("outcome cell (w={treatment}, s={group}) has no samples")]
    EmptyCell { treatment: usize, group: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(
        "dual maximizer stays on the box boundary after {doublings} doublings (B_dual = {bound}); \
         the null is likely far from feasible or the utility level is unattainable by fair points"
    )]
    UnboundedDual { bound: f64, doublings: usize },

    #[error("moment matrix is degenerate (condition number {condition:e})")]
    DegenerateMoment { condition: f64 },

    #[error("unknown {kind} strategy '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by malformed input or configuration rather
    /// than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpace(_)
                | Error::InvalidDataset(_)
                | Error::Config(_)
                | Error::UnknownStrategy { .. }
                | Error::Schema(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io(_)
                | Error::OutOfDomain { .. }
                | Error::TooFewSamples(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
