use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A discrete-action E-step instance: `B` states with `A` actions each,
/// row-major `B x A` arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEstep {
    pub n_actions: usize,
    pub pi_old: Vec<f64>,
    pub qr: Vec<f64>,
    pub qc: Vec<f64>,
    /// Per-state weights summing to 1; `None` means uniform.
    pub weights: Option<Vec<f64>>,
}

/// Primal solution of the E-step found by direct optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteEstep {
    pub q: Vec<f64>,
    pub objective: f64,
    pub cost: f64,
    pub kl: f64,
}

impl DiscreteEstep {
    pub fn n_states(&self) -> usize {
        self.pi_old.len() / self.n_actions.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let na = self.n_actions;
        if na == 0 || self.pi_old.is_empty() || self.pi_old.len() % na != 0 {
            return Err(invalid("pi_old must be a nonempty B x A array"));
        }
        let n = self.pi_old.len();
        if self.qr.len() != n || self.qc.len() != n {
            return Err(Error::Dimension {
                what: "critic values",
                expected: n,
                got: self.qr.len().min(self.qc.len()),
            });
        }
        for row in self.pi_old.chunks(na) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(invalid("pi_old rows must be strictly positive distributions"));
            }
        }
        if self.qr.iter().chain(&self.qc).any(|x| !x.is_finite()) {
            return Err(invalid("critic values must be finite"));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.n_states() || w.iter().any(|&x| !(x >= 0.0)) {
                return Err(invalid("state weights must be nonnegative, one per state"));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid("state weights must sum to 1"));
            }
        }
        Ok(())
    }

    fn state_weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.n_states() as f64; self.n_states()],
        }
    }

    /// Weighted linear functional `sum_b w_b sum_a q[b,a] v[b,a]`.
    pub fn expect(&self, q: &[f64], v: &[f64]) -> f64 {
        let w = self.state_weights();
        let na = self.n_actions;
        (0..self.n_states())
            .map(|b| w[b] * (0..na).map(|a| q[b * na + a] * v[b * na + a]).sum::<f64>())
            .sum()
    }

    /// Weighted mean of `KL(q_b || pi_old_b)`.
    pub fn kl(&self, q: &[f64]) -> f64 {
        let w = self.state_weights();
        let na = self.n_actions;
        (0..self.n_states())
            .map(|b| {
                let row: f64 = (0..na)
                    .map(|a| {
                        let i = b * na + a;
                        if q[i] > 0.0 {
                            q[i] * (q[i] / self.pi_old[i]).ln()
                        } else {
                            0.0
                        }
                    })
                    .sum();
                w[b] * row
            })
            .sum()
    }
}

/// Log-barrier objective `t <obj, q> - sum log q - log(eps1 - cost) - log(eps2 - kl)`.
struct Barrier<'a> {
    p: &'a DiscreteEstep,
    w: Vec<f64>,
    /// Linear objective to minimise.
    obj: Vec<f64>,
    eps1: Option<f64>,
    eps2: f64,
}

impl Barrier<'_> {
    fn feasible(&self, q: &[f64]) -> bool {
        if q.iter().any(|&x| !(x > 0.0)) {
            return false;
        }
        if let Some(e1) = self.eps1 {
            if self.p.expect(q, &self.p.qc) >= e1 {
                return false;
            }
        }
        self.p.kl(q) < self.eps2
    }

    fn value(&self, q: &[f64], t: f64) -> f64 {
        let lin: f64 = q.iter().zip(&self.obj).map(|(a, b)| a * b).sum();
        let mut v = t * lin - q.iter().map(|x| x.ln()).sum::<f64>();
        if let Some(e1) = self.eps1 {
            v -= (e1 - self.p.expect(q, &self.p.qc)).ln();
        }
        v - (self.eps2 - self.p.kl(q)).ln()
    }

    fn grad_hess(&self, q: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = q.len();
        let na = self.p.n_actions;
        let mut g = DVector::from_iterator(n, self.obj.iter().map(|o| t * o));
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            g[i] -= 1.0 / q[i];
            h[(i, i)] += 1.0 / (q[i] * q[i]);
        }
        if let Some(e1) = self.eps1 {
            let slack = e1 - self.p.expect(q, &self.p.qc);
            let dc = DVector::from_iterator(n, (0..n).map(|i| self.w[i / na] * self.p.qc[i]));
            g += &dc / slack;
            h += &dc * dc.transpose() / (slack * slack);
        }
        let slack = self.eps2 - self.p.kl(q);
        let dk = DVector::from_iterator(
            n,
            (0..n).map(|i| self.w[i / na] * ((q[i] / self.p.pi_old[i]).ln() + 1.0)),
        );
        g += &dk / slack;
        h += &dk * dk.transpose() / (slack * slack);
        for i in 0..n {
            h[(i, i)] += self.w[i / na] / (q[i] * slack);
        }
        (g, h)
    }

    /// Barrier path-following with the simplex equalities kept exactly.
    fn solve(&self, mut q: Vec<f64>, gap_tol: f64) -> Result<Vec<f64>> {
        let n = q.len();
        let na = self.p.n_actions;
        let nb = n / na;
        let m_ineq = n as f64 + 1.0 + if self.eps1.is_some() { 1.0 } else { 0.0 };
        let mut t = 1.0;
        loop {
            for _ in 0..200 {
                let (g, h) = self.grad_hess(&q, t);
                let mut kkt = DMatrix::<f64>::zeros(n + nb, n + nb);
                kkt.view_mut((0, 0), (n, n)).copy_from(&h);
                for i in 0..n {
                    kkt[(i, n + i / na)] = 1.0;
                    kkt[(n + i / na, i)] = 1.0;
                }
                let mut rhs = DVector::<f64>::zeros(n + nb);
                rhs.rows_mut(0, n).copy_from(&(-&g));
                let Some(sol) = kkt.lu().solve(&rhs) else {
                    return Err(Error::Numerical("singular barrier Newton system".into()));
                };
                let dx = sol.rows(0, n).into_owned();
                let decrement = -g.dot(&dx);
                if decrement / 2.0 <= 1e-13 {
                    break;
                }
                let f0 = self.value(&q, t);
                let mut step = 1.0;
                let mut moved = false;
                for _ in 0..80 {
                    let cand: Vec<f64> = q.iter().zip(dx.iter()).map(|(x, d)| x + step * d).collect();
                    if self.feasible(&cand) && self.value(&cand, t) <= f0 - 0.25 * step * decrement {
                        q = cand;
                        moved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            if m_ineq / t < gap_tol {
                return Ok(q);
            }
            t *= 8.0;
        }
    }
}

fn start_point(p: &DiscreteEstep, toward: &[f64], eps1: f64) -> Vec<f64> {
    // Move from the phase-one point back toward pi_old while keeping the cost
    // halfway between its floor and the threshold.
    let c_old = p.expect(&p.pi_old, &p.qc);
    let c_min = p.expect(toward, &p.qc);
    let theta = if c_old <= c_min {
        0.5
    } else {
        (0.5 * (eps1 - c_min) / (c_old - c_min)).clamp(0.0, 0.5)
    };
    toward
        .iter()
        .zip(&p.pi_old)
        .map(|(a, b)| (1.0 - theta) * a + theta * b)
        .collect()
}

/// Minimum of the weighted expected cost over the KL ball `KL(q || pi_old) <= eps2`.
pub fn brute_min_cost(p: &DiscreteEstep, eps2: f64) -> Result<(f64, Vec<f64>)> {
    p.validate()?;
    if eps2 == 0.0 {
        return Ok((p.expect(&p.pi_old, &p.qc), p.pi_old.clone()));
    }
    let q = phase_one(p, eps2)?;
    Ok((p.expect(&q, &p.qc), q))
}

fn phase_one(p: &DiscreteEstep, eps2: f64) -> Result<Vec<f64>> {
    let w = p.state_weights();
    let na = p.n_actions;
    let obj: Vec<f64> = p.qc.iter().enumerate().map(|(i, c)| w[i / na] * c).collect();
    let bar = Barrier {
        p,
        w,
        obj,
        eps1: None,
        eps2,
    };
    bar.solve(p.pi_old.clone(), 1e-11)
}

/// Solves the E-step primal
/// `max E_w[E_q Qr]  s.t.  E_w[E_q Qc] <= eps1, E_w KL(q || pi_old) <= eps2`
/// directly over the product of simplices with a log-barrier interior-point
/// method. The only inputs are the primal data, so it serves as an
/// independent check of the closed-form solution.
pub fn brute_force_estep(p: &DiscreteEstep, eps1: f64, eps2: f64) -> Result<BruteEstep> {
    p.validate()?;
    if !(eps2 >= 0.0) || eps1.is_nan() {
        return Err(invalid("thresholds must be numbers, eps2 nonnegative"));
    }
    let finish = |q: Vec<f64>| BruteEstep {
        objective: p.expect(&q, &p.qr),
        cost: p.expect(&q, &p.qc),
        kl: p.kl(&q),
        q,
    };
    let old_cost = p.expect(&p.pi_old, &p.qc);
    let old_ok = old_cost <= eps1;
    let na = p.n_actions;
    let flat_reward = p
        .qr
        .chunks(na)
        .all(|row| row.iter().all(|&x| x == row[0]));
    if eps2 == 0.0 || (flat_reward && old_ok) {
        return if old_ok {
            Ok(finish(p.pi_old.clone()))
        } else {
            Err(Error::Infeasible(format!(
                "old policy cost {old_cost} exceeds {eps1} and the trust region is empty"
            )))
        };
    }

    let start = if old_cost < eps1 {
        p.pi_old.clone()
    } else {
        let q1 = phase_one(p, eps2)?;
        let c_min = p.expect(&q1, &p.qc);
        if c_min >= eps1 - 1e-12 * (1.0 + eps1.abs()) {
            return Err(Error::Infeasible(format!(
                "minimum cost {c_min} inside the KL ball is not below {eps1}"
            )));
        }
        if flat_reward {
            return Ok(finish(q1));
        }
        start_point(p, &q1, eps1)
    };
    let w = p.state_weights();
    let obj: Vec<f64> = p.qr.iter().enumerate().map(|(i, r)| -w[i / na] * r).collect();
    let bar = Barrier {
        p,
        w,
        obj,
        eps1: Some(eps1),
        eps2,
    };
    let mut q = bar.solve(start, 1e-11)?;
    for row in q.chunks_mut(na) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(finish(q))
}
