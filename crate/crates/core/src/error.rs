use thiserror::Error;

/// Failures while parsing or evaluating a [`crate::expr::ScalarExpr`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("column {column}: {message}")]
    Parse { column: usize, message: String },
    #[error("unbound variable '{0}'")]
    UnknownVariable(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("warping function {index} is not positive ({value}) at the requested point")]
    NonPositiveWarping { index: usize, value: f64 },
    #[error("coordinate '{coord}' = {value} lies outside the chart domain")]
    OutOfChart { coord: String, value: f64 },
    #[error("metric is singular at the requested point")]
    SingularMetric,
    #[error("numerical instability: {0}")]
    NumericalInstability(String),
    #[error("unsupported vector field P: {0}")]
    UnsupportedP(String),
    #[error("argument blocks do not match any formula case: {0}")]
    CaseMismatch(String),
    #[error("fiber {0} is declared not Einstein")]
    FiberNotEinstein(usize),
    #[error("total dimension {0} is too small")]
    DimensionTooSmall(usize),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unsupported Kasner type: {0}")]
    UnsupportedType(String),
    #[error("integrator deviation {deviation:e} exceeds {limit:e}; step too coarse")]
    StepTooCoarse { deviation: f64, limit: f64 },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("constraint violated: {0}")]
    ConstraintViolated(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

impl GeometryError {
    /// Stable short name used in CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            GeometryError::NonPositiveWarping { .. } => "NonPositiveWarping",
            GeometryError::OutOfChart { .. } => "OutOfChart",
            GeometryError::SingularMetric => "SingularMetric",
            GeometryError::NumericalInstability(_) => "NumericalInstability",
            GeometryError::UnsupportedP(_) => "UnsupportedP",
            GeometryError::CaseMismatch(_) => "CaseMismatch",
            GeometryError::FiberNotEinstein(_) => "FiberNotEinstein",
            GeometryError::DimensionTooSmall(_) => "DimensionTooSmall",
            GeometryError::InvalidDimension(_) => "InvalidDimension",
            GeometryError::LengthMismatch { .. } => "LengthMismatch",
            GeometryError::UnsupportedType(_) => "UnsupportedType",
            GeometryError::StepTooCoarse { .. } => "StepTooCoarse",
            GeometryError::InvalidSpec(_) => "InvalidSpec",
            GeometryError::ConstraintViolated(_) => "ConstraintViolated",
            GeometryError::Expr(_) => "ExprError",
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GeometryError::NumericalInstability(_) | GeometryError::StepTooCoarse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, GeometryError>;
