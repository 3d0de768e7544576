use std::fmt;

use thiserror::Error;

/// Which bound of the admissible state set a platoon state violates.
///
/// Vehicle indices are 1-based with vehicle 1 at the front, so spacing `s_i`
/// is the gap between vehicle `i - 1` and vehicle `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaViolation {
    /// `s_index <= L`.
    Spacing { index: usize, value: f64, min_gap: f64 },
    /// `v_index` outside the speed bounds.
    Speed { index: usize, value: f64, limit: f64 },
}

impl fmt::Display for OmegaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OmegaViolation::Spacing { index, value, min_gap } => {
                write!(f, "spacing s_{index} = {value} is not above the minimum gap {min_gap}")
            }
            OmegaViolation::Speed { index, value, limit } => {
                write!(f, "speed v_{index} = {value} is outside [0, {limit}]")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state outside the admissible set: {0}")]
    OutsideOmega(OmegaViolation),

    #[error("spacing {s} is not above the minimum gap {min_gap}")]
    SpacingDomain { s: f64, min_gap: f64 },

    #[error("potential parameters infeasible: {0}")]
    Infeasible(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
