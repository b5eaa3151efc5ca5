use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: max |M - M^T| = {asymmetry:.3e} exceeds {bound:.3e}")]
    AsymmetricInput { asymmetry: f64, bound: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric positive definite (min eigenvalue {min_eig:.6e} <= {tol:.1e})")]
    NotSpd { min_eig: f64, tol: f64 },

    #[error("matrix is not Hurwitz (max real part of spectrum {max_re:.6e} >= -{tol:.1e})")]
    NotHurwitz { max_re: f64, tol: f64 },

    #[error("Hamiltonian matrix has purely imaginary nonzero eigenvalues")]
    ImaginaryEigenvalues,

    #[error("no symmetric solution with the selected spectrum: {0}")]
    NoSymmetricSolution(String),

    #[error("dimension {dim} exceeds the enumeration limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("spectrum is degenerate ({0}); enumeration not attempted")]
    DegenerateSpectrum(String),

    #[error("{what} residual {residual:.3e} exceeds certified bound {bound:.3e}")]
    Certification {
        what: &'static str,
        residual: f64,
        bound: f64,
    },

    #[error("coefficient matrix is numerically singular (condition number {cond:.3e} > {limit:.1e})")]
    BNotInvertible { cond: f64, limit: f64 },

    #[error("standing assumptions violated: {0}")]
    AssumptionViolation(String),

    #[error("discount factor too large: the Riccati equation has no symmetric positive definite solution")]
    DiscountTooLarge,

    #[error("discount factor {0:.3e} is below the ergodic routing threshold; use the ergodic solver")]
    DiscountNearZero(f64),

    #[error("instance is infeasible in the vanishing-discount limit: {0}")]
    InfeasibleAtZero(String),

    #[error("cost conversion is singular: I - Gamma^T/N is not invertible")]
    SingularConversion,

    #[error("feedback law is not admissible: closed-loop drift has eigenvalue with real part {max_re:.6e}")]
    NotAdmissible { max_re: f64 },

    #[error("time step {dt:.3e} violates the stability guard {bound:.3e}")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("truncation horizon too coarse: exp(-ell*T) = {tail:.3e} exceeds guard {guard:.1e}")]
    TruncationTooCoarse { tail: f64, guard: f64 },

    #[error("config parse error: {0}")]
    ParseError(String),

    #[error("validation failed:\n{0}")]
    ValidationError(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 0 success, 2 validation failure,
    /// 3 infeasible instance, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ParseError(_) | Error::ValidationError(_) | Error::AssumptionViolation(_) => 2,
            Error::DiscountTooLarge
            | Error::ImaginaryEigenvalues
            | Error::NoSymmetricSolution(_)
            | Error::BNotInvertible { .. }
            | Error::InfeasibleAtZero(_)
            | Error::NotSpd { .. } => 3,
            Error::Io(_) => 4,
            _ => 1,
        }
    }
}
