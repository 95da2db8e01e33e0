//! Online identification of trending Kienzle force coefficients in milling.
//!
//! The crate simulates a noisy milling force benchmark and identifies the
//! time-varying coefficients with three estimators: recursive least squares
//! with forgetting, a box-constrained ensemble Kalman filter, and the same
//! filter with repeated subset inflation. A Monte Carlo harness compares
//! them over many initial ensembles.
//!
//! - [`mill`]: chip geometry and the Kienzle force law
//! - [`signal`]: coefficient trajectories, noise, ploughing filter
//! - [`rls`]: extended RLS per force direction
//! - [`enkf`]: ensemble filter, constraints and inflation
//! - [`harness`]: Monte Carlo envelopes and the step/λ grid search
//! - [`cli`]: the `driftkf` command-line front end

pub mod cli;
pub mod enkf;
pub mod error;
pub mod harness;
pub mod mill;
pub mod rls;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
pub use mill::{CoefficientBounds, CoefficientSet, Cutter, EngagementSample, ProcessSpec, ToolSpec};
pub use signal::{CaseKind, SignalSample, TrajectoryCase};
