use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid growth rate at index {index}: {reason}")]
    InvalidRate { index: usize, reason: String },

    #[error("growth rate exceeds the floating-point range at index {index}")]
    RateOverflow { index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("operator sequence `{name}` produced an invalid matrix at index {index}: {reason}")]
    InvalidOperator {
        name: String,
        index: usize,
        reason: String,
    },

    #[error("transition over window ({m},{k}) overflowed to non-finite entries")]
    TransitionOverflow { m: usize, k: usize },

    #[error("backward transition over ({m},{k}) hit a singular restriction")]
    SingularRestriction { m: usize, k: usize },

    #[error("sequence is not invertible and no kernel restriction was supplied")]
    MissingRestriction,

    #[error(
        "rescale horizon exhausted: requested index needs base times beyond the horizon \
         (largest usable rescaled index: {max_usable})"
    )]
    HorizonExhausted { max_usable: usize },

    #[error("projection rank collapsed on the sample at time {index}")]
    RankCollapse { index: usize },

    #[error(
        "transport matrix at time {index} is ill-conditioned (cond {cond:.3e} above cap {cap:.1e}); \
         consider adapted norms"
    )]
    IllConditionedTransport { index: usize, cond: f64, cap: f64 },

    #[error("contraction condition violated: measured factor {factor:.6} >= 1")]
    NotAContraction { factor: f64 },

    #[error("smallness violated: Picard iteration did not converge (measured factor {factor:.6})")]
    PicardDiverged { factor: f64 },

    #[error("growth audit failed: {0}; spectrum may be unbounded")]
    GrowthAudit(String),

    #[error("no hyperbolic splitting: {0}")]
    NoSplitting(String),

    #[error("scenario error at `{path}`: {reason}")]
    Scenario { path: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
