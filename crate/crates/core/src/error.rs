//! Error and warning types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while validating inputs or fitting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{column}` has {got} rows, expected {expected}")]
    LengthMismatch {
        column: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("treatment indicator at row {index} is {value}, expected 0 or 1")]
    NonBinaryTreatment { index: usize, value: f64 },
    #[error("non-finite value in column `{column}` at row {index}")]
    NonFiniteValue { column: String, index: usize },
    #[error("treatment arm {arm} is empty; both arms are required")]
    DegenerateTreatmentArm { arm: u8 },
    #[error("arm {arm} has {have} units but at least {need} are required")]
    TooFewUnits { arm: u8, have: usize, need: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-finite input to `{op}`")]
    NonFiniteInput { op: &'static str },
    #[error("empty sample passed to `{op}`")]
    EmptySample { op: &'static str },
    #[error("no control units available for `{op}`")]
    EmptyControlSample { op: &'static str },
    #[error("operation requires a {expected} outcome")]
    WrongOutcomeKind { expected: &'static str },
    #[error("placebo test needs at least 2 pre-periods, got {got}")]
    TooFewPeriods { got: usize },
    #[error("hyper-parameter grid is empty")]
    EmptyGrid,
    #[error("no closed-form odds ratio for this data-generating family")]
    NoClosedForm,
    #[error("estimated outcome density at the quantile is degenerate (< {min:e})")]
    DegenerateDensity { min: f64 },
    #[error("unknown data-generating process `{0}`")]
    UnknownDgp(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Non-fatal conditions surfaced alongside results.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// An iterative fit stopped at the iteration cap before meeting its
    /// convergence tolerance.
    NonConvergence { op: &'static str, iters: usize },
    /// A linear system was rank-deficient beyond the pseudo-inverse cutoff;
    /// the returned fit is the minimum-norm solution on the retained space.
    SingularSystem { op: &'static str },
    /// The density at the estimated quantile was too small for a usable
    /// variance estimate; the confidence interval is suppressed.
    DegenerateDensity,
    /// A Monte-Carlo study ran a single repetition, so the empirical
    /// standard error is reported as zero.
    SingleRep,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::NonConvergence { op, iters } => {
                write!(f, "{op}: not converged after {iters} iterations")
            }
            Warning::SingularSystem { op } => write!(f, "{op}: singular system"),
            Warning::DegenerateDensity => {
                write!(f, "degenerate density at quantile; interval suppressed")
            }
            Warning::SingleRep => {
                write!(f, "single repetition: empirical standard error is 0")
            }
        }
    }
}
