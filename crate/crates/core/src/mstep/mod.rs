//! KL-constrained supervised policy improvement.

mod gaussian;
mod tabular;

pub use gaussian::{mstep_lagrangian, policy_update, weighted_mle_loss, MStepReport};
pub use tabular::{exact_tabular_mstep, mean_kl};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dual variables and step sizes of the decoupled M-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStepState {
    pub beta_mu: f64,
    pub beta_sigma: f64,
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
    pub alpha_theta: f64,
    pub eps_mu: f64,
    pub eps_sigma: f64,
    /// Inner iterations per M-step.
    pub iters: usize,
}

impl Default for MStepState {
    fn default() -> Self {
        Self {
            beta_mu: 1.0,
            beta_sigma: 1.0,
            alpha_mu: 1.0,
            alpha_sigma: 100.0,
            alpha_theta: 0.002,
            eps_mu: 0.001,
            eps_sigma: 0.0001,
            iters: 6,
        }
    }
}

impl MStepState {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_mu > 0.0 && self.eps_sigma > 0.0) {
            return Err(invalid("M-step KL thresholds must be positive"));
        }
        if !(self.alpha_mu >= 0.0 && self.alpha_sigma >= 0.0 && self.alpha_theta > 0.0) {
            return Err(invalid("M-step step sizes must be nonnegative (policy step positive)"));
        }
        if !(self.beta_mu >= 0.0 && self.beta_sigma >= 0.0) {
            return Err(invalid("M-step duals must be nonnegative"));
        }
        Ok(())
    }

    /// Total KL budget of one M-step, `eps_mu + eps_sigma`.
    pub fn total_kl(&self) -> f64 {
        self.eps_mu + self.eps_sigma
    }
}

/// `beta <- max(0, beta - alpha (eps - C))` for both duals.
pub fn kl_dual_step(state: MStepState, c_mu: f64, c_sigma: f64) -> MStepState {
    MStepState {
        beta_mu: (state.beta_mu - state.alpha_mu * (state.eps_mu - c_mu)).max(0.0),
        beta_sigma: (state.beta_sigma - state.alpha_sigma * (state.eps_sigma - c_sigma)).max(0.0),
        ..state
    }
}
