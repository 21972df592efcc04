use thiserror::Error;

/// Errors surfaced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    // topology
    #[error("duplicate simplex: {0}")]
    DuplicateSimplex(String),
    #[error("triangle [{0}, {1}, {2}] references edge [{3}, {4}] that is not in the complex")]
    DanglingTriangle(usize, usize, usize, usize, usize),
    #[error("invalid node index {index} (num_nodes = {num_nodes})")]
    InvalidIndex { index: usize, num_nodes: usize },
    #[error("laplacian kind {0} is incompatible with this complex: {1}")]
    IncompatibleKind(&'static str, String),
    #[error("nonpositive weight {0}")]
    NonPositiveWeight(f64),
    #[error("coincident points {0} and {1} have zero distance")]
    DegeneratePoints(usize, usize),
    #[error("k = {k} must be smaller than the number of points {n}")]
    TooManyNeighbors { k: usize, n: usize },

    // spectral
    #[error("matrix is not symmetric: max asymmetry {0:.3e} exceeds tolerance {1:.3e}")]
    NotSymmetric(f64, f64),
    #[error("eigendecomposition failed to converge")]
    ConvergenceFailure,
    #[error("scalar function is not finite at eigenvalue {0}")]
    SingularFunctionValue(f64),

    // dynamics / gtsb
    #[error("operator is singular at eigenvalue {0:.3e}; retry with a spectral floor (epsilon)")]
    SingularOperator(f64),
    #[error("endpoint covariance K11 is singular: smallest eigenvalue {0:.3e}")]
    SingularEndpointCovariance(f64),
    #[error("marginal covariance is singular: smallest eigenvalue {0:.3e}")]
    SingularMarginal(f64),
    #[error("operation undefined at t = {0} (endpoint singularity)")]
    EndpointSingularity(f64),

    // gp
    #[error("subspace-restricted kernel requires Hodge projectors")]
    MissingProjectors,

    // sim
    #[error("non-finite state at step {step} (t = {t})")]
    NonFiniteState { step: usize, t: f64 },

    // metrics
    #[error("matrix is not positive semi-definite: eigenvalue {0:.3e}")]
    NotPsd(f64),
    #[error("covariance is singular: smallest eigenvalue {0:.3e}")]
    SingularCovariance(f64),
    #[error("exact transport limited to {limit} points per side, got {got}")]
    SizeLimitExceeded { limit: usize, got: usize },
    #[error("sinkhorn did not converge in {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    // io / config
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
