//! Off-policy primal-dual baseline: the actor ascends `Q_r - lambda Q_c` and
//! `lambda` follows a PID controller on the cost constraint.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::critics::CriticPair;
use crate::error::{invalid, Error, Result};
use crate::nn::Optimizer;
use crate::oracle::{exact_policy_eval, FiniteCmdp};
use crate::policy::{GaussianPolicy, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Upper clamp of the integral term.
    pub i_max: f64,
    pub integral: f64,
    pub prev_error: f64,
    pub lambda: f64,
}

impl Default for PidState {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.1,
            kd: 0.0,
            i_max: 1e4,
            integral: 0.0,
            prev_error: 0.0,
            lambda: 0.0,
        }
    }
}

impl PidState {
    pub fn with_gains(kp: f64, ki: f64, kd: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            ..Self::default()
        }
    }
}

/// One controller update on the error `e = J_c - eps1`.
pub fn pid_update(pid: PidState, jc_estimate: f64, eps1: f64) -> Result<PidState> {
    if !jc_estimate.is_finite() || !eps1.is_finite() {
        return Err(invalid("PID inputs must be finite"));
    }
    let e = jc_estimate - eps1;
    let integral = (pid.integral + e).clamp(0.0, pid.i_max);
    let lambda = (pid.kp * e + pid.ki * integral + pid.kd * (e - pid.prev_error)).max(0.0);
    Ok(PidState {
        integral,
        prev_error: e,
        lambda,
        ..pid
    })
}

/// One reparameterised gradient step of the actor on
/// `mean_b E_xi [Q_r(s_b, a) - lambda Q_c(s_b, a)]`, `a = mu + sigma xi`.
/// Coordinates that hit the action bounds pass no gradient.
/// Returns the objective before the step.
pub fn pd_actor_step<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    critics: &CriticPair,
    states: &[Vec<f64>],
    lambda: f64,
    opt: &mut Optimizer,
    rng: &mut R,
) -> Result<f64> {
    if states.is_empty() {
        return Err(invalid("actor batch is empty"));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("lambda must be nonnegative"));
    }
    let n = states.len() as f64;
    let dim = policy.action_dim();
    let mut grad = vec![0.0; policy.n_params()];
    let mut obj = 0.0;
    for s in states {
        let d = policy.dist(s);
        let xi: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let mut a = vec![0.0; dim];
        let mut free = vec![true; dim];
        for i in 0..dim {
            let raw = d.mean[i] + d.var[i].sqrt() * xi[i];
            a[i] = raw.clamp(policy.low[i], policy.high[i]);
            free[i] = a[i] == raw;
        }
        let (qr, gr, qc, gc) = critics.action_grads(s, &a);
        obj += (qr - lambda * qc) / n;
        let mut dmean = vec![0.0; dim];
        let mut dvar = vec![0.0; dim];
        for i in 0..dim {
            if !free[i] {
                continue;
            }
            let g = gr[i] - lambda * gc[i];
            dmean[i] = -g / n;
            dvar[i] = -g * xi[i] / (2.0 * d.var[i].sqrt()) / n;
        }
        policy.accumulate_grad(s, &dmean, &dvar, &mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite actor gradient".into()));
    }
    let mut theta = policy.params();
    opt.step(&mut theta, &grad);
    policy.set_params(&theta)?;
    Ok(obj)
}

/// Tabular actor step with exact critics: a natural-gradient softmax update
/// `logits += lr (A_r - lambda A_c)`. Returns the exact `(J_r, J_c)` before the step.
pub fn tabular_pd_step(m: &FiniteCmdp, policy: &mut TabularPolicy, lambda: f64, lr: f64) -> Result<(f64, f64)> {
    if policy.n_states != m.n_states || policy.n_actions != m.n_actions {
        return Err(Error::Dimension {
            what: "tabular policy",
            expected: m.n_states * m.n_actions,
            got: policy.n_states * policy.n_actions,
        });
    }
    let pi = policy.table();
    let q = exact_policy_eval(m, &pi)?;
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            let i = m.sa(s, a);
            let adv = (q.qr[i] - q.vr[s]) - lambda * (q.qc[i] - q.vc[s]);
            policy.logits[i] += lr * adv;
        }
    }
    Ok(q.returns(&m.rho0))
}
