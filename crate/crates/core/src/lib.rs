//! Cross-fitted difference-in-differences estimation under odds-ratio
//! equi-confounding.
//!
//! The crate implements a semiparametric ATT/QTT estimator for two-period
//! panels in which the treatment/outcome odds ratio, rather than the mean
//! trend, is assumed stable over time. Nuisance functions are estimated by
//! kernel density-ratio methods (KL importance estimation or least-squares
//! importance fitting) and closed-form adversarial RKHS regression; the
//! influence function is evaluated by cross-fitting, with asymptotic and
//! multiplier-bootstrap inference, a parallel-trends baseline, simulation
//! data-generating processes, diagnostics, and a Monte-Carlo harness.

pub mod data;
pub mod density_ratio;
pub mod error;
pub mod estimator;
pub mod kernel;
pub(crate) mod linalg;
pub mod minimax;
pub mod sim;

pub use data::{
    make_folds, validate_dataset, BandwidthPolicy, EstimatorConfig, FoldAssignment, LambdaPolicy,
    OutcomeKind, PanelDataset,
};
pub use error::{Error, Result, Warning};
