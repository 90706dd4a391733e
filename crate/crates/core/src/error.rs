use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown domain preset `{0}`")]
    UnknownDomain(String),

    #[error("unknown experiment preset `{0}`")]
    UnknownPreset(String),

    #[error("non-conforming mesh: {0}")]
    NonConforming(String),

    #[error("element {0} has non-positive volume")]
    DegenerateElement(usize),

    #[error("element index {index} out of range ({count} elements)")]
    ElementOutOfRange { index: usize, count: usize },

    #[error("point ({:.6}, {:.6}, {:.6}) lies outside the mesh", .0[0], .0[1], .0[2])]
    OutsideMesh([f64; 3]),

    #[error("source point {0} is not strictly inside the domain")]
    SourceNotInterior(usize),

    #[error("source points {0} and {1} coincide")]
    CoincidentSources(usize, usize),

    #[error("the source set is empty")]
    EmptySources,

    #[error("unsupported quadrature: {0}")]
    UnsupportedQuadrature(String),

    #[error("conjugate gradients stopped after {iterations} iterations with relative residual {residual:e}")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("active-set iteration did not converge in {iterations} iterations (projection residual {residual:e})")]
    ActiveSetNonConvergence { iterations: usize, residual: f64 },

    #[error("active-set iteration revisited an earlier active set at iteration {0}")]
    ActiveSetCycle(usize),

    #[error("weight exponent {alpha} outside the admissible range ({lo}, 2) for dimension {dim}")]
    AlphaOutOfRange { alpha: f64, lo: f64, dim: usize },

    #[error("side {0} lies on the boundary")]
    BoundarySide(usize),

    #[error("gradient norm vanishes")]
    ZeroGradient,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("mesh file: {0}")]
    MeshFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
