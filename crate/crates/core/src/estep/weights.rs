use serde::{Deserialize, Serialize};

use super::{DualSolution, DualStatus, ParticleSet};
use crate::error::{invalid, Error, Result};

/// Row-stochastic `B x K` weights over particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalWeights {
    pub n_states: usize,
    pub k: usize,
    pub w: Vec<f64>,
}

impl VariationalWeights {
    pub fn row(&self, b: usize) -> &[f64] {
        &self.w[b * self.k..(b + 1) * self.k]
    }

    pub fn uniform(n_states: usize, k: usize) -> Self {
        Self {
            n_states,
            k,
            w: vec![1.0 / k as f64; n_states * k],
        }
    }
}

/// `W[b, k] ~ p[b, k] exp(score[b, k] / eta)`, normalised per row with
/// max-shifted exponentials.
fn tilt(ps: &ParticleSet, eta: f64, score: impl Fn(usize) -> f64) -> VariationalWeights {
    let k = ps.k;
    let mut w = vec![0.0; ps.n_states * k];
    for b in 0..ps.n_states {
        let row = &mut w[b * k..(b + 1) * k];
        let mut m = f64::NEG_INFINITY;
        for j in 0..k {
            row[j] = score(b * k + j) / eta + ps.log_base(b, j);
            m = m.max(row[j]);
        }
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    VariationalWeights {
        n_states: ps.n_states,
        k,
        w,
    }
}

/// Closed-form optimal weights `q* ~ pi_old exp((Qr - lambda* Qc) / eta*)`.
pub fn variational_weights(ps: &ParticleSet, sol: &DualSolution) -> Result<VariationalWeights> {
    ps.validate()?;
    if sol.status == DualStatus::InfeasibleDetected {
        return Err(Error::Infeasible(
            "dual solver detected an empty feasible set; use cost-minimising weights".into(),
        ));
    }
    if !(sol.eta > 0.0) || !(sol.lam >= 0.0) {
        return Err(invalid("dual solution out of domain"));
    }
    Ok(tilt(ps, sol.eta, |i| ps.qr[i] - sol.lam * ps.qc[i]))
}

/// `h(eta) = eta eps2 + eta sum_b w_b log sum_k p exp(-Qc / eta)`; its minimum
/// is minus the smallest expected cost reachable inside the KL ball.
fn cost_dual(ps: &ParticleSet, eta: f64, eps2: f64) -> f64 {
    let k = ps.k;
    let mut acc = 0.0;
    for b in 0..ps.n_states {
        let mut m = f64::NEG_INFINITY;
        let mut u = Vec::with_capacity(k);
        for j in 0..k {
            let v = -ps.qc[b * k + j] / eta + ps.log_base(b, j);
            m = m.max(v);
            u.push(v);
        }
        let z: f64 = u.iter().map(|v| (v - m).exp()).sum();
        acc += ps.state_weight(b) * (m + z.ln());
    }
    eta * eps2 + eta * acc
}

/// Value of `h` as `eta -> 0`: minus the weighted mean of the per-state
/// minimum cost over particles with positive base mass.
fn cost_dual_at_zero(ps: &ParticleSet) -> f64 {
    let k = ps.k;
    let mut acc = 0.0;
    for b in 0..ps.n_states {
        let m = (0..k)
            .filter(|&j| ps.base_prob(b, j) > 0.0)
            .map(|j| ps.qc[b * k + j])
            .fold(f64::INFINITY, f64::min);
        acc += ps.state_weight(b) * m;
    }
    -acc
}

/// Minimiser of `h` over `log eta` by golden-section search.
fn cost_eta(ps: &ParticleSet, eps2: f64) -> (f64, f64) {
    let (mut a, mut b) = ((1e-10f64).ln(), (1e10f64).ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let h = |le: f64| cost_dual(ps, le.exp(), eps2);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (h(c), h(d));
    while b - a > 1e-12 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = h(d);
        }
    }
    let le = 0.5 * (a + b);
    (le.exp(), h(le))
}

/// Smallest state-averaged expected cost achievable by reweighting the
/// particles within `KL <= eps2` of the old policy. Slater's condition holds
/// iff this is below the cost threshold.
pub fn min_feasible_cost(ps: &ParticleSet, eps2: f64) -> Result<f64> {
    ps.validate()?;
    if !(eps2 >= 0.0) {
        return Err(invalid("eps2 must be nonnegative"));
    }
    if eps2 == 0.0 {
        let u = VariationalWeights {
            n_states: ps.n_states,
            k: ps.k,
            w: (0..ps.n_states * ps.k).map(|i| ps.base_prob(i / ps.k, i % ps.k)).collect(),
        };
        return Ok(ps.weighted_cost(&u));
    }
    let (_, h_min) = cost_eta(ps, eps2);
    Ok(-h_min.min(cost_dual_at_zero(ps)))
}

/// Fallback when the safety constraint cannot be met: weights that minimise
/// the expected cost inside the KL ball. Returns the weights and their temperature.
pub fn cost_minimizing_weights(ps: &ParticleSet, eps2: f64) -> Result<(VariationalWeights, f64)> {
    ps.validate()?;
    if !(eps2 > 0.0) {
        return Err(invalid("eps2 must be positive"));
    }
    let (eta, _) = cost_eta(ps, eps2);
    Ok((tilt(ps, eta, |i| -ps.qc[i]), eta))
}

/// Strict-convexity conditions on every state row: neither critic is
/// constant and the reward is not proportional to the cost.
pub fn strict_convexity_holds(ps: &ParticleSet) -> bool {
    let k = ps.k;
    (0..ps.n_states).all(|b| {
        let r = &ps.qr[b * k..(b + 1) * k];
        let c = &ps.qc[b * k..(b + 1) * k];
        let varies = |v: &[f64]| v.iter().any(|&x| (x - v[0]).abs() > 1e-9);
        if !varies(r) || !varies(c) {
            return false;
        }
        // proportional iff the 2 x K matrix [r; c] has rank 1
        let (rr, cc, rc) = r.iter().zip(c).fold((0.0, 0.0, 0.0), |(a, b, d), (x, y)| {
            (a + x * x, b + y * y, d + x * y)
        });
        rr * cc - rc * rc > 1e-9 * rr.max(1e-300) * cc.max(1e-300)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estep::{solve_dual, DualOptions};

    fn sol(eta: f64, lam: f64) -> DualSolution {
        DualSolution {
            eta,
            lam,
            value: 0.0,
            grad_norm: 0.0,
            status: DualStatus::Optimal,
            iterations: 0,
        }
    }

    #[test]
    fn softmax_example() {
        let ps = ParticleSet::from_values(1, 2, vec![1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let w = variational_weights(&ps, &sol(1.0, 1.0)).unwrap();
        let e = std::f64::consts::E;
        assert!((w.w[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((w.w[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_rows_are_uniform() {
        let ps = ParticleSet::from_values(2, 4, vec![3.0; 8], vec![1.0; 8]).unwrap();
        let w = variational_weights(&ps, &sol(0.3, 2.0)).unwrap();
        assert!(w.w.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn infeasible_refused() {
        let ps = ParticleSet::from_values(1, 2, vec![1.0, 1.0], vec![0.0, 1.0]).unwrap();
        let mut s = sol(1.0, 1e3);
        s.status = DualStatus::InfeasibleDetected;
        assert!(matches!(variational_weights(&ps, &s), Err(Error::Infeasible(_))));
    }

    #[test]
    fn min_cost_limits() {
        let ps = ParticleSet::from_values(2, 3, vec![0.0; 6], vec![0.0; 6]).unwrap();
        assert_eq!(min_feasible_cost(&ps, 0.1).unwrap(), 0.0);
        let ps = ParticleSet::from_values(2, 3, vec![0.0; 6], vec![1.0, 2.0, 3.0, 0.5, 4.0, 4.0]).unwrap();
        let c = min_feasible_cost(&ps, 1e3).unwrap();
        assert!((c - 0.75).abs() < 1e-2, "{c}");
        let tight = min_feasible_cost(&ps, 0.01).unwrap();
        assert!(tight > c);
    }

    #[test]
    fn kkt_on_small_instance() {
        let ps = ParticleSet::from_values(
            2,
            4,
            vec![1.0, 0.2, -0.5, 0.7, 0.0, 1.5, 0.3, 0.9],
            vec![1.0, 0.1, 0.0, 0.8, 0.2, 1.2, 0.0, 0.5],
        )
        .unwrap();
        let eps1 = 0.35;
        let eps2 = 0.2;
        let s = solve_dual(&ps, eps1, eps2, &DualOptions::default()).unwrap();
        assert_eq!(s.status, DualStatus::Optimal, "{s:?}");
        let w = variational_weights(&ps, &s).unwrap();
        assert!((ps.weighted_cost(&w) - eps1).abs() < 1e-6);
        assert!((ps.kl_to_base(&w) - eps2).abs() < 1e-6);
    }
}
