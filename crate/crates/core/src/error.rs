//! Crate-wide error type.

use core::fmt;

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of the tomography pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had the wrong length for the system dimension.
    DimensionMismatch { expected: usize, got: usize },
    /// Operation only supports Hilbert space dimensions 2 and 3.
    UnsupportedDimension(usize),
    /// Matrix expected to be Hermitian was not (asymmetry above tolerance).
    NotHermitian,
    /// Matrix expected to be unitary was not.
    NotUnitary,
    /// Matrix expected to have unit trace did not.
    NotUnitTrace,
    /// Jacobi eigensolver failed to reach the off-diagonal threshold.
    EigenNoConvergence,
    /// Linear system is singular or numerically rank-deficient.
    SingularSystem,
    /// Newton Jacobian is rank-deficient; caller should fall back to the
    /// quasi-Newton minimizer.
    SingularJacobian,
    /// Line search could not find a decreasing step.
    LineSearchStalled,
    /// Iteration budget exhausted without meeting the convergence criteria.
    IterationBudget,
    /// A non-finite value (NaN/inf) appeared during iteration.
    NonFinite,
    /// Density matrix has an eigenvalue below the physicality tolerance.
    NegativeEigenvalue,
    /// Probability vector is unnormalized or has entries below -1e-12.
    InvalidProbabilities,
    /// An observed outcome has non-positive model probability, so the
    /// log-likelihood is undefined at this point.
    NonPositiveLikelihood,
    /// Sample contains no observations.
    EmptySample,
    /// Biased-basis generation did not satisfy the overlap condition
    /// within the sweep budget.
    MbbNoConvergence,
    /// A constraint is active at the estimate; asymptotic inference
    /// assumptions fail there.
    ActiveConstraint,
    /// Eigenvalue gap too small for perturbative eigenvalue derivatives.
    DegenerateSpectrum,
    /// Every replication was filtered out; nothing to summarize.
    AllFiltered,
    /// Too few values to compute the requested statistic.
    InsufficientData,
    /// Sample has zero spread; bandwidth selection is undefined.
    ZeroSpread,
    /// Tolerance calibration found no threshold meeting the fidelity target.
    CalibrationFailed,
    /// Invalid configuration value.
    InvalidConfig(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::UnsupportedDimension(n) => {
                write!(f, "unsupported Hilbert space dimension {n} (only 2 and 3)")
            }
            Error::NotHermitian => write!(f, "matrix is not Hermitian"),
            Error::NotUnitary => write!(f, "matrix is not unitary"),
            Error::NotUnitTrace => write!(f, "matrix does not have unit trace"),
            Error::EigenNoConvergence => write!(f, "eigensolver did not converge"),
            Error::SingularSystem => write!(f, "linear system is singular"),
            Error::SingularJacobian => write!(f, "Newton Jacobian is singular"),
            Error::LineSearchStalled => write!(f, "line search found no decreasing step"),
            Error::IterationBudget => write!(f, "iteration budget exhausted"),
            Error::NonFinite => write!(f, "non-finite value encountered"),
            Error::NegativeEigenvalue => {
                write!(f, "density matrix eigenvalue below physical tolerance")
            }
            Error::InvalidProbabilities => write!(f, "invalid probability vector"),
            Error::NonPositiveLikelihood => {
                write!(f, "observed outcome has non-positive probability")
            }
            Error::EmptySample => write!(f, "sample contains no observations"),
            Error::MbbNoConvergence => {
                write!(f, "biased-basis generation exceeded the sweep budget")
            }
            Error::ActiveConstraint => {
                write!(f, "constraint active at the estimate; inference unreliable")
            }
            Error::DegenerateSpectrum => write!(f, "near-degenerate eigenvalues"),
            Error::AllFiltered => write!(f, "all replications filtered out"),
            Error::InsufficientData => write!(f, "not enough data points"),
            Error::ZeroSpread => write!(f, "sample has zero spread"),
            Error::CalibrationFailed => write!(f, "tolerance calibration failed"),
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
        }
    }
}

impl core::error::Error for Error {}
