//! Computable forms of the policy-improvement guarantees: the ELBO, the
//! worst-case cost bound, robustness margins and the two-step KL bound.

mod lambert;

pub use lambert::{lambert_w, two_step_kl_bound};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critics::CriticPair;
use crate::error::{invalid, Error, Result};
use crate::estep::{ParticleSet, VariationalWeights};
use crate::oracle::{exact_policy_eval, FiniteCmdp};
use crate::policy::GaussianPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    /// ELBO temperature; `None` uses the current `eta*`.
    pub alpha: Option<f64>,
    /// Actions per state when estimating the cost-advantage gap.
    pub delta_samples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            delta_samples: 16,
        }
    }
}

impl DiagnosticsConfig {
    pub fn alpha_or(&self, eta: f64) -> Result<f64> {
        let a = self.alpha.unwrap_or(eta);
        if !(a > 0.0) {
            return Err(invalid("ELBO temperature must be positive"));
        }
        Ok(a)
    }
}

/// Particle representation of another policy: rows proportional to
/// `base * exp(log_ratio)`, where `log_ratio` is its log-density relative to
/// the policy the particles were drawn from.
pub fn particle_density(ps: &ParticleSet, log_ratio: &[f64]) -> Result<VariationalWeights> {
    let k = ps.k;
    if log_ratio.len() != ps.n_states * k {
        return Err(Error::Dimension {
            what: "log-ratio matrix",
            expected: ps.n_states * k,
            got: log_ratio.len(),
        });
    }
    let mut w = vec![0.0; ps.n_states * k];
    for b in 0..ps.n_states {
        let row: Vec<f64> = (0..k).map(|j| log_ratio[b * k + j] + ps.log_base(b, j)).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Numerical("particle density row has no mass".into()));
        }
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for j in 0..k {
            w[b * k + j] = (row[j] - m).exp() / z;
        }
    }
    Ok(VariationalWeights {
        n_states: ps.n_states,
        k,
        w,
    })
}

/// `sum_b w_b [ sum_k W Qr - alpha KL(W_b || theta_b) ]`, with `theta` the
/// particle representation of the parametric policy.
pub fn elbo_estimate(ps: &ParticleSet, w: &VariationalWeights, theta: &VariationalWeights, alpha: f64) -> Result<f64> {
    let n = ps.n_states * ps.k;
    if w.w.len() != n || theta.w.len() != n {
        return Err(Error::Dimension {
            what: "ELBO weights",
            expected: n,
            got: w.w.len().min(theta.w.len()),
        });
    }
    if !(alpha >= 0.0) {
        return Err(invalid("ELBO temperature must be nonnegative"));
    }
    let mut acc = 0.0;
    for b in 0..ps.n_states {
        let mut v = 0.0;
        let mut kl = 0.0;
        for j in 0..ps.k {
            let i = b * ps.k + j;
            v += w.w[i] * ps.qr[i];
            if w.w[i] > 0.0 {
                kl += w.w[i] * (w.w[i] / theta.w[i]).ln();
            }
        }
        let term = if alpha == 0.0 { v } else { v - alpha * kl };
        acc += ps.state_weight(b) * term;
    }
    Ok(acc)
}

/// Worst-case discounted cost after a trust-region step of size `eps` from a
/// feasible policy: `eps1 + ((1 - gamma) + sqrt(2 eps) gamma) delta_c / (1 - gamma)^2`.
pub fn cost_bound(eps1: f64, gamma: f64, eps: f64, delta_c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma must lie in [0, 1)"));
    }
    if !(eps >= 0.0 && delta_c >= 0.0) {
        return Err(invalid("KL size and advantage gap must be nonnegative"));
    }
    let g1 = 1.0 - gamma;
    Ok(eps1 + (g1 + (2.0 * eps).sqrt() * gamma) * delta_c / (g1 * g1))
}

/// Exact `max_s |E_{a ~ pi_new} A_c^{pi_old}(s, a)|` on a finite CMDP.
pub fn cost_advantage_gap(m: &FiniteCmdp, pi_old: &[f64], pi_new: &[f64]) -> Result<f64> {
    let q = exact_policy_eval(m, pi_old)?;
    if pi_new.len() != pi_old.len() {
        return Err(Error::Dimension {
            what: "new policy table",
            expected: pi_old.len(),
            got: pi_new.len(),
        });
    }
    Ok((0..m.n_states)
        .map(|s| {
            (0..m.n_actions)
                .map(|a| pi_new[m.sa(s, a)] * (q.qc[m.sa(s, a)] - q.vc[s]))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max))
}

/// Sampled estimate of the cost-advantage gap of the online policy relative
/// to the target policy over `states`, using the cost critic.
pub fn cost_advantage_gap_estimate<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    critics: &CriticPair,
    states: &[Vec<f64>],
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Err(invalid("need at least one action sample"));
    }
    let mut gap = 0.0f64;
    for s in states {
        let new: f64 = policy.sample_actions(s, n, rng).iter().map(|a| critics.q_c(s, a)).sum::<f64>() / n as f64;
        let old: f64 =
            policy.sample_target_actions(s, n, rng).iter().map(|a| critics.q_c(s, a)).sum::<f64>() / n as f64;
        gap = gap.max((new - old).abs());
    }
    Ok(gap)
}

/// Trust-region robustness check for `n` consecutive steps: holds iff
/// `eps_mstep < eps2` (one step) or `eps_mstep < eps2 / 8` (two steps).
pub fn robustness_margin(eps_mstep: f64, eps2: f64, n: u32) -> Result<(bool, f64)> {
    if !(eps_mstep > 0.0 && eps2 > 0.0) {
        return Err(invalid("KL thresholds must be positive"));
    }
    let margin = match n {
        1 => eps2 - eps_mstep,
        2 => eps2 / 8.0 - eps_mstep,
        _ => return Err(invalid(format!("robustness defined for 1 or 2 steps, got {n}"))),
    };
    Ok((margin > 0.0, margin))
}
