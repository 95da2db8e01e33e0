//! Recursive least squares with exponential forgetting, linearized around
//! the current estimate of one Kienzle direction `[k_i, m_i]`.
//!
//! The innovation uses the nonlinear disk-summed prediction while the gain
//! uses the Jacobian at the prior estimate (extended RLS). No bounds are
//! imposed, so the estimate is free to run away; a covariance that stops
//! being positive semidefinite is reported as divergence.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::mill::EngagementSample;

pub const DEFAULT_P0_SCALE: f64 = 1e5;
pub const DEFAULT_FORGETTING: f64 = 0.98;

/// Relative tolerance on negative covariance eigenvalues before a run is
/// declared divergent.
const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsState {
    pub estimate: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub forgetting: f64,
    /// Number of updates applied so far.
    pub steps: usize,
}

impl RlsState {
    pub fn new(x0: Vector2<f64>, p0_scale: f64, forgetting: f64) -> Result<Self> {
        if !(p0_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("initial covariance scale must be positive, got {p0_scale}")));
        }
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(Error::InvalidConfig(format!("forgetting factor must lie in (0, 1], got {forgetting}")));
        }
        Ok(Self {
            estimate: x0,
            covariance: Matrix2::identity() * p0_scale,
            forgetting,
            steps: 0,
        })
    }

    pub fn with_defaults(x0: Vector2<f64>) -> Self {
        Self::new(x0, DEFAULT_P0_SCALE, DEFAULT_FORGETTING).expect("defaults are valid")
    }

    /// One recursion for a scalar measurement with regressor `m` and the
    /// given innovation (measurement minus prediction).
    pub fn update(&self, m: &Vector2<f64>, innovation: f64) -> Result<Self> {
        let rho = self.forgetting;
        let pm = self.covariance * m;
        let gain = pm / (rho + m.dot(&pm));
        let estimate = self.estimate + gain * innovation;
        let mut covariance = (Matrix2::identity() - gain * m.transpose()) * self.covariance / rho;
        covariance = 0.5 * (covariance + covariance.transpose());

        let steps = self.steps + 1;
        if !estimate.iter().chain(covariance.iter()).all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                sample: steps,
                reason: "non-finite estimate or covariance".into(),
            });
        }
        let min_eig = covariance.symmetric_eigenvalues().min();
        let scale = covariance.abs().max();
        if min_eig < -PSD_TOLERANCE * scale {
            return Err(Error::Divergence {
                sample: steps,
                reason: format!("covariance lost positive semidefiniteness (eigenvalue {min_eig:e})"),
            });
        }
        Ok(Self {
            estimate,
            covariance,
            forgetting: rho,
            steps,
        })
    }
}

/// Disk-summed force `Σ k b h^(1-m)` for the state `[k, m]`.
pub fn kienzle_prediction(x: &Vector2<f64>, eng: &EngagementSample) -> f64 {
    eng.engaged().map(|h| x[0] * eng.b_disk * h.powf(1.0 - x[1])).sum()
}

/// Measurement row `[Σ b h^(1-m), -Σ k b h^(1-m) ln h]` at `x`.
pub fn rls_jacobian(x: &Vector2<f64>, eng: &EngagementSample) -> Result<Vector2<f64>> {
    let mut m = Vector2::zeros();
    let mut any = false;
    for h in eng.engaged() {
        any = true;
        let base = eng.b_disk * h.powf(1.0 - x[1]);
        m[0] += base;
        m[1] -= x[0] * base * h.ln();
    }
    if any {
        Ok(m)
    } else {
        Err(Error::Disengaged)
    }
}

/// Extended-RLS step for one force direction with measured force `z`.
pub fn rls_step(state: &RlsState, z: f64, eng: &EngagementSample) -> Result<RlsState> {
    let m = rls_jacobian(&state.estimate, eng)?;
    let innovation = z - kienzle_prediction(&state.estimate, eng);
    state.update(&m, innovation)
}
