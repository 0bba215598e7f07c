use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FiniteCmdp;
use crate::error::{invalid, Error, Result};

/// Exact action values of a fixed policy, row-major `S x A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactQ {
    pub n_states: usize,
    pub n_actions: usize,
    pub qr: Vec<f64>,
    pub qc: Vec<f64>,
    pub vr: Vec<f64>,
    pub vc: Vec<f64>,
}

impl ExactQ {
    /// Discounted returns from the initial distribution.
    pub fn returns(&self, rho0: &[f64]) -> (f64, f64) {
        let jr = rho0.iter().zip(&self.vr).map(|(p, v)| p * v).sum();
        let jc = rho0.iter().zip(&self.vc).map(|(p, v)| p * v).sum();
        (jr, jc)
    }
}

pub(crate) fn check_policy(m: &FiniteCmdp, pi: &[f64]) -> Result<()> {
    if pi.len() != m.n_states * m.n_actions {
        return Err(Error::Dimension {
            what: "tabular policy",
            expected: m.n_states * m.n_actions,
            got: pi.len(),
        });
    }
    for row in pi.chunks(m.n_actions) {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("policy rows must be probability vectors"));
        }
    }
    Ok(())
}

/// `P_pi` as a dense `S x S` matrix.
fn state_kernel(m: &FiniteCmdp, pi: &[f64]) -> DMatrix<f64> {
    let (ns, na) = (m.n_states, m.n_actions);
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = pi[s * na + a];
            if w == 0.0 {
                continue;
            }
            for (s2, &x) in m.row(s, a).iter().enumerate() {
                p[(s, s2)] += w * x;
            }
        }
    }
    p
}

/// Solves `V = r_pi + gamma P_pi V` for reward and cost, then
/// `Q = r + gamma P V`.
pub fn exact_policy_eval(m: &FiniteCmdp, pi: &[f64]) -> Result<ExactQ> {
    m.validate()?;
    check_policy(m, pi)?;
    let (ns, na) = (m.n_states, m.n_actions);
    let mut a = -state_kernel(m, pi) * m.gamma;
    for i in 0..ns {
        a[(i, i)] += 1.0;
    }
    let mut rhs = DMatrix::zeros(ns, 2);
    for s in 0..ns {
        for act in 0..na {
            let w = pi[s * na + act];
            rhs[(s, 0)] += w * m.r[s * na + act];
            rhs[(s, 1)] += w * m.c[s * na + act];
        }
    }
    let v = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular policy-evaluation system".into()))?;
    let vr: Vec<f64> = v.column(0).iter().copied().collect();
    let vc: Vec<f64> = v.column(1).iter().copied().collect();
    let mut qr = m.r.clone();
    let mut qc = m.c.clone();
    for s in 0..ns {
        for act in 0..na {
            let row = m.row(s, act);
            let i = s * na + act;
            qr[i] += m.gamma * row.iter().zip(&vr).map(|(p, x)| p * x).sum::<f64>();
            qc[i] += m.gamma * row.iter().zip(&vc).map(|(p, x)| p * x).sum::<f64>();
        }
    }
    Ok(ExactQ {
        n_states: ns,
        n_actions: na,
        qr,
        qc,
        vr,
        vc,
    })
}

/// Largest componentwise Bellman residual of `q` under `pi`.
pub fn bellman_residual(m: &FiniteCmdp, pi: &[f64], q: &ExactQ) -> f64 {
    let na = m.n_actions;
    let v = |tab: &[f64], s: usize| -> f64 { (0..na).map(|a| pi[s * na + a] * tab[s * na + a]).sum() };
    let mut worst = 0.0f64;
    for s in 0..m.n_states {
        for a in 0..na {
            let row = m.row(s, a);
            let i = s * na + a;
            let next_r: f64 = row.iter().enumerate().map(|(s2, p)| p * v(&q.qr, s2)).sum();
            let next_c: f64 = row.iter().enumerate().map(|(s2, p)| p * v(&q.qc, s2)).sum();
            worst = worst
                .max((q.qr[i] - m.r[i] - m.gamma * next_r).abs())
                .max((q.qc[i] - m.c[i] - m.gamma * next_c).abs());
        }
    }
    worst
}

/// Normalised discounted state occupancy `(1 - gamma) rho0^T (I - gamma P_pi)^-1`.
pub fn state_occupancy(m: &FiniteCmdp, pi: &[f64]) -> Result<Vec<f64>> {
    m.validate()?;
    check_policy(m, pi)?;
    let ns = m.n_states;
    let mut a = -state_kernel(m, pi).transpose() * m.gamma;
    for i in 0..ns {
        a[(i, i)] += 1.0;
    }
    let rho = DVector::from_column_slice(&m.rho0);
    let d = a
        .lu()
        .solve(&rho)
        .ok_or_else(|| Error::Numerical("singular occupancy system".into()))?;
    Ok(d.iter().map(|x| (x * (1.0 - m.gamma)).max(0.0)).collect())
}

/// Undiscounted expected reward and cost over the first `horizon` steps.
pub fn finite_horizon_returns(m: &FiniteCmdp, pi: &[f64], horizon: usize) -> Result<(f64, f64)> {
    check_policy(m, pi)?;
    let (ns, na) = (m.n_states, m.n_actions);
    let p = state_kernel(m, pi);
    let r: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| pi[s * na + a] * m.r[s * na + a]).sum()).collect();
    let c: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| pi[s * na + a] * m.c[s * na + a]).sum()).collect();
    let mut dist = DVector::from_column_slice(&m.rho0);
    let (mut jr, mut jc) = (0.0, 0.0);
    for _ in 0..horizon {
        jr += dist.iter().zip(&r).map(|(d, x)| d * x).sum::<f64>();
        jc += dist.iter().zip(&c).map(|(d, x)| d * x).sum::<f64>();
        dist = p.tr_mul(&dist);
    }
    Ok((jr, jc))
}
