use thiserror::Error;

/// Errors produced by the set construction, synthesis and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("{what} is rank deficient (rank {rank}, required {required})")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        required: usize,
    },

    #[error("{what} is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { what: &'static str, min_eig: f64 },

    #[error("designated block is singular at tolerance (min eigenvalue {min_eig:e})")]
    SingularBlock { min_eig: f64 },

    #[error("Slater condition violated: M has min eigenvalue {lambda_min:e} (max {lambda_max:e})")]
    SlaterViolation { lambda_min: f64, lambda_max: f64 },

    #[error("basis identity [X; X~][G G~] = I violated (residual {residual:e})")]
    BasisIdentity { residual: f64 },

    #[error("set is unbounded: leading block has eigenvalue {max_eig:e} >= 0")]
    Unbounded { max_eig: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("noise construction failed: {0}")]
    Construction(String),

    #[error("block `{block}` is not affine in the registered variables: {reason}")]
    Canonicalization { block: String, reason: String },

    #[error("semidefinite program {status}: {detail}")]
    Solver { status: String, detail: String },

    #[error("estimator recovery failed: {0}")]
    Recovery(String),

    #[error("certificate check failed: {0}")]
    Certification(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dims(rows: usize, cols: usize) -> String {
    format!("{rows}x{cols}")
}
