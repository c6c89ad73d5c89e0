use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A required field is missing or has the wrong shape in an input document.
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },

    /// An input document parsed but violates an invariant.
    #[error("validation error at `{field}`: {message}")]
    Validation { field: String, message: String },

    /// A Bayes update was requested against evidence with zero prior mass.
    #[error("zero evidence: the posterior normalizer is 0")]
    ZeroEvidence,

    /// A belief split's barycenter does not match the prior.
    #[error("split is not Bayes plausible: barycenter residual {residual:.3e}")]
    NotBayesPlausible { residual: f64 },

    /// Linear-program pieces have mutually inconsistent dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The simplex solver could not certify its result within tolerance.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// An optimization that should always be feasible was not; the input
    /// problem is malformed.
    #[error("infeasible problem: {0}")]
    InfeasibleProblem(String),

    /// The prior lies outside the convex hull of the supplied belief grid.
    #[error("prior outside the convex hull of the grid atoms")]
    PriorOutsideHull,

    /// An operation that requires a binary state space got something else.
    #[error("wrong dimension: operation requires {expected} states, got {got}")]
    WrongDimension { expected: usize, got: usize },

    /// Discretizing a type density produced all-zero masses.
    #[error("degenerate density: all discretized type masses are 0")]
    DegenerateDensity,

    /// A virtual-surplus evaluation hit a type with zero probability mass.
    #[error("zero density at type index {0}")]
    ZeroDensity(usize),

    /// A bidder's virtual types are not nondecreasing; ironing is unsupported.
    #[error("irregular distribution: {0}")]
    IrregularDistribution(String),

    /// A simulation configuration violates its invariants.
    #[error("config error: {0}")]
    ConfigError(String),
}

pub type Result<T> = std::result::Result<T, Error>;
