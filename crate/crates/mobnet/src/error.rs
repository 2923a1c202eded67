use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} of the rate matrix sums to {sum:e}, expected 0")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("off-diagonal entry q[{i}][{j}] = {value} is negative")]
    NegativeOffDiagonal { i: usize, j: usize, value: f64 },
    #[error("rate matrix must be at least 2x2, got n = {0}")]
    TooSmall(usize),
    #[error("rate matrix is not irreducible (its support graph is not strongly connected)")]
    NotIrreducible,
    #[error("eigenvector matrix condition number {cond:e} exceeds the diagonalizability gate")]
    NotDiagonalizable { cond: f64 },
    #[error("eigendecomposition failed: {0}")]
    SpectralFailure(String),
    #[error("imaginary residue {max:e} above tolerance in a real-valued result")]
    ImaginaryResidue { max: f64 },
    #[error("reference distribution has a zero coordinate")]
    DegenerateReference,
    #[error("entropy-norm constants failed grid certification: {0}")]
    CertificationFailed(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("total event rate {rate:e} exceeds the configured guard {guard:e}")]
    RateOverflow { rate: f64, guard: f64 },
    #[error("event count guard ({0} events) exceeded before the horizon")]
    EventGuardExceeded(u64),
    #[error("vector is not in the pi-orthogonal hyperplane (residual {0:e})")]
    NotInHyperplane(f64),
    #[error("flow left the positivity domain during quadrature (numerical fault)")]
    DomainViolation,
    #[error("(v, t) is not admissible: some 1 + phi_i(v, t) vanishes")]
    AdmissibilityViolation,
    #[error("point is not strictly interior to the simplex")]
    BoundaryPoint,
    #[error("quadrature refinement failed to reach tolerance {requested:e} (achieved {achieved:e})")]
    QuadratureDivergence { requested: f64, achieved: f64 },
    #[error("declared regime {declared} contradicts parameters (lambda = {lambda}, mu = {mu})")]
    RegimeMismatch {
        declared: &'static str,
        lambda: f64,
        mu: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
