use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("degenerate element {element}: area {area:e}")]
    DegenerateElement { element: usize, area: f64 },
    #[error("edge {edge} is a boundary edge")]
    BoundaryEdge { edge: usize },
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
    #[error("refinement closure exceeded {cap} steps")]
    ClosureCap { cap: usize },
    #[error("empty set of marked elements")]
    EmptyMarking,
    #[error("empty indicator field")]
    EmptyIndicatorField,
    #[error("conjugate gradients did not converge in {iterations} iterations (residual {residual:e})")]
    CgDiverged { iterations: usize, residual: f64 },
    #[error("non-finite value {value} at quadrature node ({x}, {y})")]
    NonFiniteField { value: f64, x: f64, y: f64 },
    #[error("fixed-point iteration did not converge in {iterations} iterations (increment {increment:e})")]
    FixedPointDiverged { iterations: usize, increment: f64 },
    #[error("problem has no exact solution fields")]
    MissingExactSolution,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("non-positive value in column for log-log fit")]
    NonPositiveColumn,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
