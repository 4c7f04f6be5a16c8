use thiserror::Error;

/// Errors raised by the geometry pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point {point:?} lies outside the domain of `{field}`")]
    DomainViolation { field: String, point: Vec<f64> },

    #[error("singular {0}")]
    Singular(&'static str),

    #[error("rank defect in {what}: rank {rank}, expected {expected}")]
    RankDefect {
        what: &'static str,
        rank: usize,
        expected: usize,
    },

    #[error("quaternion relations violated (residual {0:e})")]
    InvalidTriple(f64),

    #[error("incompatible 2-forms: {0}")]
    IncompatibleForms(String),

    #[error("no sign choice yields a positive definite metric")]
    IndefiniteReconstruction,

    #[error(
        "asymmetric hessian (residual {0:e}); connection has torsion or the step is too large"
    )]
    AsymmetricHessian(f64),

    #[error("connection declared torsion-free has torsion {0:e}")]
    UnexpectedTorsion(f64),

    #[error("ill-conditioned {what} (condition number {cond:e})")]
    IllConditioned { what: &'static str, cond: f64 },

    #[error("operation requires {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error("check `{check}` does not support model `{model}`")]
    UnsupportedModel { check: String, model: String },
}

pub type Result<T, E = QcError> = std::result::Result<T, E>;
