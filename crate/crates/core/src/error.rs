use thiserror::Error;

/// Errors raised by estimation, testing and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("singular design: smallest/largest singular value ratio {condition:e} below tolerance {tolerance:e}")]
    Singular { condition: f64, tolerance: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no factor structure: {0}")]
    NoFactorStructure(String),

    #[error("negative control set has {size} entities but at least {required} are needed{hint}")]
    Underdetermined {
        size: usize,
        required: usize,
        hint: &'static str,
    },

    #[error("degenerate normalizer for entity {entity}")]
    DegenerateNormalizer { entity: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("time indices are misaligned at period {period}")]
    Misaligned { period: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
