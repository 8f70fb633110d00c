use thiserror::Error;

/// Errors produced by the numerical and combinatorial routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: expected {expected}")]
    InvalidDimension { dim: usize, expected: &'static str },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("nonterminating truncation: the walk is recurrent in dimension {dim}")]
    NonterminatingTruncation { dim: usize },

    #[error("recurrent dimension {dim}: escape probabilities vanish")]
    RecurrentDimension { dim: usize },

    #[error("radius too small: site at distance {distance:.3} lies outside B(0, {half_radius:.1})")]
    RadiusTooSmall { distance: f64, half_radius: f64 },

    #[error("ill-conditioned: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.1e})")]
    IllConditioned {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    #[error("oracle box too small: offset with sup-norm {required} exceeds usable radius {available}")]
    OracleBoxTooSmall { required: i64, available: i64 },

    #[error("singular Gram matrix on a set of {size} sites")]
    SingularGram { size: usize },

    #[error("insufficient tail resolution: {usable} usable thresholds, need at least {required}")]
    InsufficientTailResolution { usable: usize, required: usize },

    #[error("path never visits the target set")]
    PathMissesSet,

    #[error("inconsistent occupation: {0}")]
    InconsistentOccupation(String),

    #[error("not path-realizable: {0}")]
    NotPathRealizable(String),

    #[error("direction degenerate: operator norm stays below 1 up to scale {max_scale:e}")]
    DirectionDegenerate { max_scale: f64 },

    #[error("effective sample size too small: {ess:.1} < {required}")]
    EffectiveSampleSizeTooSmall { ess: f64, required: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
