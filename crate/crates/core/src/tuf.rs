//! Time-utility functions.
//!
//! A [`TimeUtilityFunction`] maps a task's response latency to the utility the
//! requester obtains: a plateau of `beta` until the expected response time
//! `ert_s`, then a linear decline with slope `alpha`. The suspended-generation
//! variant keeps the plateau anchored at zero waiting instead of `ert_s`, so a
//! segment generated before the preceding action completes earns full utility.
//!
//! Every utility number in the crate flows through this module; the scheduler
//! and the metrics pipeline share no other evaluation path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Invalid TUF parameters.
#[derive(Debug, Error, PartialEq)]
pub enum TufError {
    /// Slope must be ≤ 0: utility never increases with lateness.
    #[error("alpha must be <= 0, got {0}")]
    PositiveSlope(f64),
    /// Non-finite or negative parameter.
    #[error("invalid TUF parameter {name}={value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Piecewise-linear time-utility function `min(beta, alpha*(t - ert) + beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeUtilityFunction {
    /// Initial utility (plateau value).
    pub beta: f64,
    /// Decline slope per second past the deadline, always ≤ 0.
    pub alpha: f64,
    /// Expected response time (deadline) in seconds.
    pub ert_s: f64,
}

impl TimeUtilityFunction {
    /// Build a validated TUF.
    pub fn new(beta: f64, alpha: f64, ert_s: f64) -> Result<Self, TufError> {
        if !beta.is_finite() {
            return Err(TufError::InvalidParameter {
                name: "beta",
                value: beta,
            });
        }
        if !alpha.is_finite() || alpha > 0.0 {
            return Err(TufError::PositiveSlope(alpha));
        }
        if !ert_s.is_finite() || ert_s < 0.0 {
            return Err(TufError::InvalidParameter {
                name: "ert_s",
                value: ert_s,
            });
        }
        Ok(Self { beta, alpha, ert_s })
    }

    /// Utility of responding at time `t_s` (seconds since the request).
    ///
    /// Total function: negative `t_s` is handled by the same formula and
    /// returns the plateau `beta`.
    pub fn eval(&self, t_s: f64) -> f64 {
        self.beta.min(self.alpha * (t_s - self.ert_s) + self.beta)
    }

    /// Suspended-generation variant: plateau for all `t_s <= 0`, then the same
    /// decline. Used for segments whose waiting time is measured from the end
    /// of the preceding action rather than from request arrival.
    pub fn eval_suspended(&self, t_s: f64) -> f64 {
        self.beta.min(self.alpha * t_s.max(0.0) + self.beta)
    }
}

/// Urgency level of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UrgencyKind {
    Normal,
    Urgent,
}

/// An urgency level together with its TUF profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrgencyClass {
    pub kind: UrgencyKind,
    pub tuf: TimeUtilityFunction,
}

impl UrgencyClass {
    /// Normal profile: one-second deadline, utility crosses zero at 1.5 s.
    pub fn normal() -> Self {
        Self {
            kind: UrgencyKind::Normal,
            tuf: TimeUtilityFunction {
                beta: 1.0,
                alpha: -2.0,
                ert_s: 1.0,
            },
        }
    }

    /// Urgent profile: 200 ms deadline, utility crosses zero near 0.5 s.
    ///
    /// The slope is stored as the conventional -6.67 rather than recomputed
    /// from the cutoff, so the zero crossing lands at 0.49985 s; callers that
    /// assert the cutoff use a 0.01 tolerance.
    pub fn urgent() -> Self {
        Self {
            kind: UrgencyKind::Urgent,
            tuf: TimeUtilityFunction {
                beta: 2.0,
                alpha: -6.67,
                ert_s: 0.2,
            },
        }
    }
}
