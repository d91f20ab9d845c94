use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("domain bounds are inverted or not finite")]
    InvertedBounds,
    #[error("cell count must be positive")]
    NonpositiveCellCount,
    #[error("at least 2 base cells (per side) are required, got {0}")]
    TooFewCells(usize),
    #[error("cell {0} has nonpositive measure")]
    DegenerateCell(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("functions live on different finite element spaces")]
    SpaceMismatch,
    #[error("target space is not a refinement of the source space")]
    NotDescendant,
    #[error("coefficient vector has length {got}, space dimension is {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("nonfinite integrand on cell {cell}")]
    NonFinite { cell: usize },
    #[error("truncation radius must be positive, got {0}")]
    BadRadius(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("exponents must satisfy p > q > 1 (p = {p}, q = {q})")]
    Exponents { p: f64, q: f64 },
    #[error("dimension N = {dim} requires p > N (p = {p})")]
    DimensionExponent { dim: usize, p: f64 },
    #[error("(H1) violated: weight lower bound a_0 = {0} must be positive")]
    H1(f64),
    #[error("(H3) violated: {0}")]
    H3(String),
    #[error("(H3a) violated: {0}")]
    H3a(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("level {level}: no convergence, residual {residual:.3e} after {iterations} iterations ({stage})")]
    NoConvergence { level: usize, residual: f64, iterations: usize, stage: String },
    #[error("at least {min} levels are required, got {got}")]
    TooFewLevels { min: usize, got: usize },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}
