use serde::{Deserialize, Serialize};

use super::{kl_dual_step, MStepState};
use crate::error::{invalid, Error, Result};
use crate::estep::{ParticleSet, VariationalWeights};
use crate::nn::Optimizer;
use crate::policy::{DiagGaussian, GaussianPolicy};

/// Summary of one M-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStepReport {
    /// Decoupled KL terms after the last inner iteration.
    pub c_mu: f64,
    pub c_sigma: f64,
    /// Weighted negative log-likelihood of the online policy after the update.
    pub loss: f64,
    pub state: MStepState,
}

fn check_shapes(policy: &GaussianPolicy, ps: &ParticleSet, w: &VariationalWeights) -> Result<()> {
    if ps.states.len() != ps.n_states || ps.actions.len() != ps.n_states * ps.k {
        return Err(invalid("particle set lacks states or actions"));
    }
    if w.n_states != ps.n_states || w.k != ps.k || w.w.len() != ps.n_states * ps.k {
        return Err(Error::Dimension {
            what: "variational weights",
            expected: ps.n_states * ps.k,
            got: w.w.len(),
        });
    }
    if ps.actions.iter().any(|a| a.len() != policy.action_dim()) {
        return Err(Error::Dimension {
            what: "particle action",
            expected: policy.action_dim(),
            got: ps.actions.iter().map(Vec::len).find(|&l| l != policy.action_dim()).unwrap_or(0),
        });
    }
    Ok(())
}

/// `-sum_b w_b sum_k W[b,k] log pi_theta(a_k | s_b)` for the online policy.
pub fn weighted_mle_loss(policy: &GaussianPolicy, ps: &ParticleSet, w: &VariationalWeights) -> Result<f64> {
    check_shapes(policy, ps, w)?;
    let mut loss = 0.0;
    for b in 0..ps.n_states {
        let d = policy.dist(&ps.states[b]);
        let row: f64 = (0..ps.k)
            .map(|k| w.w[b * ps.k + k] * d.log_prob_unchecked(&ps.actions[b * ps.k + k]))
            .sum();
        loss -= ps.state_weight(b) * row;
    }
    Ok(loss)
}

/// Loss minimised by the M-step, its gradient in the policy parameters and
/// the decoupled KL terms `(C_mu, C_sigma)` relative to the target policy.
///
/// With `(mu', S')` the target head outputs and `(mu, S)` the online ones,
/// the likelihood uses `N(mu, S')` and `N(mu', S)`, and
/// `C_mu = KL(N(mu', S') || N(mu, S'))`, `C_sigma = KL(N(mu', S') || N(mu', S))`.
pub fn mstep_lagrangian(
    policy: &GaussianPolicy,
    ps: &ParticleSet,
    w: &VariationalWeights,
    beta_mu: f64,
    beta_sigma: f64,
) -> Result<(f64, Vec<f64>, f64, f64)> {
    check_shapes(policy, ps, w)?;
    let n = policy.action_dim();
    let mut grad = vec![0.0; policy.n_params()];
    let (mut value, mut c_mu, mut c_sigma) = (0.0, 0.0, 0.0);
    let mut olds = Vec::with_capacity(ps.n_states);
    let mut means = Vec::with_capacity(ps.n_states);
    let mut covs = Vec::with_capacity(ps.n_states);
    for b in 0..ps.n_states {
        let s = &ps.states[b];
        let old = policy.target_dist(s);
        let cur = policy.dist(s);
        let sw = ps.state_weight(b);
        let pi1 = DiagGaussian {
            mean: cur.mean.clone(),
            var: old.var.clone(),
        };
        let pi2 = DiagGaussian {
            mean: old.mean.clone(),
            var: cur.var.clone(),
        };
        let mut dmean = vec![0.0; n];
        let mut dvar = vec![0.0; n];
        for k in 0..ps.k {
            let wk = w.w[b * ps.k + k];
            if wk == 0.0 {
                continue;
            }
            let a = &ps.actions[b * ps.k + k];
            value -= sw * wk * (pi1.log_prob_unchecked(a) + pi2.log_prob_unchecked(a));
            for i in 0..n {
                dmean[i] -= sw * wk * (a[i] - cur.mean[i]) / old.var[i];
                let e = a[i] - old.mean[i];
                dvar[i] -= sw * wk * (0.5 * e * e / (cur.var[i] * cur.var[i]) - 0.5 / cur.var[i]);
            }
        }
        for i in 0..n {
            // KL penalties, batch-averaged with the same state weights
            dmean[i] += beta_mu * sw * (cur.mean[i] - old.mean[i]) / old.var[i];
            dvar[i] += beta_sigma * sw * 0.5 * (1.0 / cur.var[i] - old.var[i] / (cur.var[i] * cur.var[i]));
        }
        policy.accumulate_grad(s, &dmean, &dvar, &mut grad);
        olds.push(old);
        means.push(pi1);
        covs.push(pi2);
    }
    for b in 0..ps.n_states {
        let sw = ps.state_weight(b);
        c_mu += sw * olds[b].kl(&means[b])?;
        c_sigma += sw * olds[b].kl(&covs[b])?;
    }
    value += beta_mu * c_mu + beta_sigma * c_sigma;
    Ok((value, grad, c_mu, c_sigma))
}

/// Decoupled KL terms of the online policy against cached target distributions.
fn decoupled_kl(policy: &GaussianPolicy, ps: &ParticleSet, olds: &[DiagGaussian]) -> Result<(f64, f64)> {
    let (mut c_mu, mut c_sigma) = (0.0, 0.0);
    for (b, (old, cur)) in olds.iter().zip(policy.dists(&ps.states)).enumerate() {
        let sw = ps.state_weight(b);
        let pi1 = DiagGaussian {
            mean: cur.mean,
            var: old.var.clone(),
        };
        let pi2 = DiagGaussian {
            mean: old.mean.clone(),
            var: cur.var,
        };
        c_mu += sw * old.kl(&pi1)?;
        c_sigma += sw * old.kl(&pi2)?;
    }
    Ok((c_mu, c_sigma))
}

/// Gradient of the M-step Lagrangian; same value as [`mstep_lagrangian`]
/// but with the target distributions precomputed.
fn lagrangian_grad(
    policy: &GaussianPolicy,
    ps: &ParticleSet,
    w: &VariationalWeights,
    olds: &[DiagGaussian],
    beta_mu: f64,
    beta_sigma: f64,
) -> Vec<f64> {
    let n = policy.action_dim();
    let mut grad = vec![0.0; policy.n_params()];
    for (b, (old, cur)) in olds.iter().zip(policy.dists(&ps.states)).enumerate() {
        let sw = ps.state_weight(b);
        let mut dmean = vec![0.0; n];
        let mut dvar = vec![0.0; n];
        for k in 0..ps.k {
            let wk = w.w[b * ps.k + k];
            if wk == 0.0 {
                continue;
            }
            let a = &ps.actions[b * ps.k + k];
            for i in 0..n {
                dmean[i] -= sw * wk * (a[i] - cur.mean[i]) / old.var[i];
                let e = a[i] - old.mean[i];
                dvar[i] -= sw * wk * (0.5 * e * e / (cur.var[i] * cur.var[i]) - 0.5 / cur.var[i]);
            }
        }
        for i in 0..n {
            dmean[i] += beta_mu * sw * (cur.mean[i] - old.mean[i]) / old.var[i];
            dvar[i] += beta_sigma * sw * 0.5 * (1.0 / cur.var[i] - old.var[i] / (cur.var[i] * cur.var[i]));
        }
        policy.accumulate_grad(&ps.states[b], &dmean, &dvar, &mut grad);
    }
    grad
}

/// Runs `state.iters` alternating dual and policy steps.
pub fn policy_update(
    policy: &mut GaussianPolicy,
    ps: &ParticleSet,
    w: &VariationalWeights,
    state: MStepState,
    opt: &mut Optimizer,
) -> Result<MStepReport> {
    state.validate()?;
    check_shapes(policy, ps, w)?;
    let olds = policy.target_dists(&ps.states);
    let mut st = state;
    let (mut c_mu, mut c_sigma) = decoupled_kl(policy, ps, &olds)?;
    for _ in 0..st.iters {
        st = kl_dual_step(st, c_mu, c_sigma);
        let grad = lagrangian_grad(policy, ps, w, &olds, st.beta_mu, st.beta_sigma);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite M-step gradient".into()));
        }
        let mut theta = policy.params();
        opt.step(&mut theta, &grad);
        policy.set_params(&theta)?;
        (c_mu, c_sigma) = decoupled_kl(policy, ps, &olds)?;
    }
    let loss = weighted_mle_loss(policy, ps, w)?;
    Ok(MStepReport {
        c_mu,
        c_sigma,
        loss,
        state: st,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(seed: u64) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GaussianPolicy::new(2, vec![-5.0], vec![5.0], &[8], 1.0, &mut rng).unwrap()
    }

    #[test]
    fn standard_normal_loss() {
        let mut pol = policy(0);
        pol.mean_net.params_mut().fill(0.0);
        // variance head output softplus(z) + 1e-6 = 1
        pol.var_net.params_mut().fill(0.0);
        pol.var_net.set_output_bias((1.0f64 - 1e-6).exp_m1().ln());
        let ps = ParticleSet::new(vec![vec![0.3, 0.1]], vec![vec![0.0], vec![0.0]], vec![0.0; 2], vec![0.0; 2])
            .unwrap();
        let w = VariationalWeights::uniform(1, 2);
        let loss = weighted_mle_loss(&pol, &ps, &w).unwrap();
        assert!((loss - 0.918_938_533_204_672_7).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn lagrangian_gradient_matches_finite_differences() {
        let mut pol = policy(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // move online away from target
        let mut th = pol.params();
        for (i, t) in th.iter_mut().enumerate() {
            *t += 0.05 * ((i % 7) as f64 - 3.0);
        }
        pol.set_params(&th).unwrap();
        let states = vec![vec![0.2, -0.4], vec![1.0, 0.5], vec![-0.3, 0.8]];
        let mut actions = Vec::new();
        for s in &states {
            actions.extend(pol.sample_target_actions(s, 4, &mut rng));
        }
        let ps = ParticleSet::new(states, actions, vec![0.0; 12], vec![0.0; 12]).unwrap();
        let w = VariationalWeights {
            n_states: 3,
            k: 4,
            w: vec![0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25, 0.7, 0.1, 0.1, 0.1],
        };
        let (_, grad, _, _) = mstep_lagrangian(&pol, &ps, &w, 2.0, 3.0).unwrap();
        let olds = pol.target_dists(&ps.states);
        let fast = lagrangian_grad(&pol, &ps, &w, &olds, 2.0, 3.0);
        for (a, b) in grad.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12);
        }
        let h = 1e-6;
        for i in 0..th.len() {
            let mut p = pol.clone();
            let mut t = th.clone();
            t[i] += h;
            p.set_params(&t).unwrap();
            let up = mstep_lagrangian(&p, &ps, &w, 2.0, 3.0).unwrap().0;
            t[i] -= 2.0 * h;
            p.set_params(&t).unwrap();
            let dn = mstep_lagrangian(&p, &ps, &w, 2.0, 3.0).unwrap().0;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
