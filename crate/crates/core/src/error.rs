use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid parameters or scenario definition.
    Input,
    /// Observed data violates a schema or invariant.
    Data,
    /// An estimator or solver could not produce a result.
    Numerical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    InvalidPatch { index: usize, n_patches: usize },
    DimensionMismatch { context: &'static str, expected: usize, found: usize },
    InvalidGraph(String),
    InvalidParameter(String),
    NonAdjacentRate { from: usize, to: usize },
    NonPositiveCovariate { index: usize, value: f64 },
    NoFeasibleAlternative,
    Data(String),
    NoUsableRows(&'static str),
    RankDeficient { dependent: Vec<String> },
    SingularCovariance { jitter: f64 },
    NonConvergence { iterations: usize, best: Vec<f64>, objective: f64 },
    UnknownLabel(String),
    InvalidLevel(f64),
    Unidentified(String),
    Calibration(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidPatch { .. }
            | Error::InvalidGraph(_)
            | Error::InvalidParameter(_)
            | Error::NonAdjacentRate { .. }
            | Error::InvalidLevel(_)
            | Error::UnknownLabel(_) => ErrorClass::Input,
            Error::DimensionMismatch { .. }
            | Error::NonPositiveCovariate { .. }
            | Error::Data(_)
            | Error::NoUsableRows(_) => ErrorClass::Data,
            Error::NoFeasibleAlternative
            | Error::RankDeficient { .. }
            | Error::SingularCovariance { .. }
            | Error::NonConvergence { .. }
            | Error::Unidentified(_)
            | Error::Calibration(_) => ErrorClass::Numerical,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidPatch { index, n_patches } => {
                write!(f, "patch index {index} out of range (0..{n_patches})")
            }
            Error::DimensionMismatch { context, expected, found } => {
                write!(f, "{context}: expected dimension {expected}, found {found}")
            }
            Error::InvalidGraph(msg) => write!(f, "invalid patch graph: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::NonAdjacentRate { from, to } => write!(
                f,
                "nonzero dispersion rate between non-adjacent patches {} and {}",
                from + 1,
                to + 1
            ),
            Error::NonPositiveCovariate { index, value } => {
                write!(f, "covariate {index} must be positive, got {value}")
            }
            Error::NoFeasibleAlternative => write!(f, "no alternative has a finite utility"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::NoUsableRows(what) => write!(f, "no usable rows for {what}"),
            Error::RankDeficient { dependent } => {
                write!(f, "design is rank deficient; dependent columns: ")?;
                for (i, label) in dependent.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{label}")?;
                }
                Ok(())
            }
            Error::SingularCovariance { jitter } => write!(
                f,
                "residual covariance singular even after ridge jitter {jitter:e}"
            ),
            Error::NonConvergence { iterations, objective, .. } => write!(
                f,
                "no convergence after {iterations} iterations (best objective {objective:e})"
            ),
            Error::UnknownLabel(label) => write!(f, "unknown parameter label `{label}`"),
            Error::InvalidLevel(level) => {
                write!(f, "confidence level must lie in (0, 1), got {level}")
            }
            Error::Unidentified(msg) => write!(f, "parameter not identified: {msg}"),
            Error::Calibration(msg) => write!(f, "biomass calibration failed: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
