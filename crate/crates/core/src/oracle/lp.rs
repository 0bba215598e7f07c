use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{exact_policy_eval, FiniteCmdp};
use crate::error::{invalid, Error, Result};

const PIVOT_TOL: f64 = 1e-11;

/// Exact constrained optimum of a finite CMDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    /// Row-major `S x A`; unvisited states get the uniform distribution.
    pub policy: Vec<f64>,
    /// Discounted occupancy `d(s, a)`, summing to `1 / (1 - gamma)`.
    pub occupancy: Vec<f64>,
    pub j_r: f64,
    pub j_c: f64,
    /// Multiplier of the cost constraint (zero when it is slack or absent).
    pub lambda: f64,
}

struct Simplex {
    /// Final basis, one column index per row.
    basis: Vec<usize>,
    x: Vec<f64>,
    /// Duals `y = B^-T c_B`.
    y: Vec<f64>,
}

enum Outcome {
    Optimal(Simplex),
    Infeasible,
    Unbounded,
}

/// Two-phase tableau simplex with Bland's rule for
/// `min c^T x  s.t.  A x = b, x >= 0`, assuming `b >= 0`.
fn simplex(a: &DMatrix<f64>, b: &[f64], c: &[f64]) -> Result<Outcome> {
    let (m, n) = a.shape();
    let width = n + m + 1;
    let mut t = DMatrix::<f64>::zeros(m, width);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, width - 1)] = b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut phase1 = vec![0.0; n + m];
    for v in phase1.iter_mut().skip(n) {
        *v = 1.0;
    }
    if !run(&mut t, &mut basis, &phase1, n + m)? {
        return Err(Error::Numerical("phase-one simplex reported unbounded".into()));
    }
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| t[(i, width - 1)])
        .sum();
    let scale = 1.0 + b.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if infeas > 1e-9 * scale {
        return Ok(Outcome::Infeasible);
    }
    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut keep = vec![true; m];
    for i in 0..m {
        if basis[i] < n {
            continue;
        }
        match (0..n).find(|&j| t[(i, j)].abs() > 1e-9) {
            Some(j) => pivot(&mut t, &mut basis, i, j),
            None => keep[i] = false,
        }
    }
    let rows: Vec<usize> = (0..m).filter(|&i| keep[i]).collect();
    let mut t2 = DMatrix::<f64>::zeros(rows.len(), n + 1);
    let mut basis2 = Vec::with_capacity(rows.len());
    for (k, &i) in rows.iter().enumerate() {
        for j in 0..n {
            t2[(k, j)] = t[(i, j)];
        }
        t2[(k, n)] = t[(i, width - 1)];
        basis2.push(basis[i]);
    }
    if !run(&mut t2, &mut basis2, c, n)? {
        return Ok(Outcome::Unbounded);
    }

    // Re-solve with the final basis for accurate primal and dual values.
    let k = rows.len();
    let mut bm = DMatrix::<f64>::zeros(k, k);
    let mut bb = DVector::<f64>::zeros(k);
    let mut cb = DVector::<f64>::zeros(k);
    for (r, &i) in rows.iter().enumerate() {
        bb[r] = b[i];
        for (col, &j) in basis2.iter().enumerate() {
            bm[(r, col)] = a[(i, j)];
        }
    }
    for (col, &j) in basis2.iter().enumerate() {
        cb[col] = c[j];
    }
    let lu = bm.clone().lu();
    let xb = lu
        .solve(&bb)
        .ok_or_else(|| Error::Numerical("singular final simplex basis".into()))?;
    let yr = bm
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or_else(|| Error::Numerical("singular final simplex basis".into()))?;
    let mut x = vec![0.0; n];
    for (col, &j) in basis2.iter().enumerate() {
        x[j] = xb[col].max(0.0);
    }
    let mut y = vec![0.0; m];
    for (r, &i) in rows.iter().enumerate() {
        y[i] = yr[r];
    }
    Ok(Outcome::Optimal(Simplex {
        basis: basis2,
        x,
        y,
    }))
}

/// Runs simplex iterations over the first `ncols` columns; returns false if unbounded.
fn run(t: &mut DMatrix<f64>, basis: &mut [usize], c: &[f64], ncols: usize) -> Result<bool> {
    let (m, width) = t.shape();
    let rhs = width - 1;
    let max_iter = 50_000;
    for _ in 0..max_iter {
        let entering = (0..ncols).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let mut red = c[j];
            for i in 0..m {
                red -= c[basis[i]] * t[(i, j)];
            }
            red < -1e-10
        });
        let Some(j) = entering else {
            return Ok(true);
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[(i, j)];
            if aij > PIVOT_TOL {
                let ratio = t[(i, rhs)] / aij;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((i, _)) = leave else {
            return Ok(false);
        };
        pivot(t, basis, i, j);
    }
    Err(Error::Numerical("simplex iteration limit reached".into()))
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
    let (m, width) = t.shape();
    let p = t[(row, col)];
    for j in 0..width {
        t[(row, j)] /= p;
    }
    for i in 0..m {
        if i == row {
            continue;
        }
        let f = t[(i, col)];
        if f != 0.0 {
            for j in 0..width {
                let v = t[(row, j)];
                t[(i, j)] -= f * v;
            }
        }
    }
    basis[row] = col;
}

/// Flow constraints `sum_a d(s', a) - gamma sum_{s,a} P(s'|s,a) d(s,a) = rho0(s')`.
fn flow_matrix(m: &FiniteCmdp, extra_rows: usize, extra_cols: usize) -> DMatrix<f64> {
    let (ns, na) = (m.n_states, m.n_actions);
    let mut a = DMatrix::<f64>::zeros(ns + extra_rows, ns * na + extra_cols);
    for s in 0..ns {
        for act in 0..na {
            let j = s * na + act;
            a[(s, j)] += 1.0;
            for (s2, &p) in m.row(s, act).iter().enumerate() {
                a[(s2, j)] -= m.gamma * p;
            }
        }
    }
    a
}

fn policy_from_occupancy(m: &FiniteCmdp, d: &[f64]) -> Vec<f64> {
    let na = m.n_actions;
    let mut pi = vec![1.0 / na as f64; d.len()];
    for (s, row) in d.chunks(na).enumerate() {
        let tot: f64 = row.iter().sum();
        if tot > 1e-12 {
            for a in 0..na {
                pi[s * na + a] = row[a] / tot;
            }
        }
    }
    pi
}

/// Smallest discounted cost any policy can achieve from `rho0`.
pub fn min_discounted_cost(m: &FiniteCmdp) -> Result<f64> {
    m.validate()?;
    let a = flow_matrix(m, 0, 0);
    match simplex(&a, &m.rho0, &m.c)? {
        Outcome::Optimal(s) => Ok(s.x.iter().zip(&m.c).map(|(x, c)| x * c).sum()),
        _ => Err(Error::Numerical("minimum-cost LP failed".into())),
    }
}

/// Maximises discounted reward subject to discounted cost `<= eps1` over
/// occupancy measures. `eps1 = inf` drops the cost constraint.
pub fn solve_constrained_lp(m: &FiniteCmdp, eps1: f64) -> Result<LpSolution> {
    m.validate()?;
    if !(eps1 >= 0.0) {
        return Err(invalid("cost threshold must be nonnegative"));
    }
    let (ns, na) = (m.n_states, m.n_actions);
    let nd = ns * na;
    let constrained = eps1.is_finite();
    let (a, b, c) = if constrained {
        let mut a = flow_matrix(m, 1, 1);
        for j in 0..nd {
            a[(ns, j)] = m.c[j];
        }
        a[(ns, nd)] = 1.0;
        let mut b = m.rho0.clone();
        b.push(eps1);
        let mut c: Vec<f64> = m.r.iter().map(|r| -r).collect();
        c.push(0.0);
        (a, b, c)
    } else {
        let c: Vec<f64> = m.r.iter().map(|r| -r).collect();
        (flow_matrix(m, 0, 0), m.rho0.clone(), c)
    };
    let sol = match simplex(&a, &b, &c)? {
        Outcome::Optimal(s) => s,
        Outcome::Infeasible => {
            let floor = min_discounted_cost(m)?;
            return Err(Error::Infeasible(format!(
                "cost threshold {eps1} is below the minimum achievable discounted cost {floor}"
            )));
        }
        Outcome::Unbounded => return Err(Error::Numerical("occupancy LP unbounded".into())),
    };
    debug_assert!(sol.basis.len() <= a.nrows());
    let d = sol.x[..nd].to_vec();
    let lambda = if constrained { (-sol.y[ns]).max(0.0) } else { 0.0 };
    let policy = policy_from_occupancy(m, &d);
    let q = exact_policy_eval(m, &policy)?;
    let (j_r, j_c) = q.returns(&m.rho0);
    Ok(LpSolution {
        policy,
        occupancy: d,
        j_r,
        j_c,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_mixes_at_threshold() {
        let m = FiniteCmdp::bandit(0.0, vec![1.0, 0.0], vec![1.0, 0.0]);
        let s = solve_constrained_lp(&m, 0.5).unwrap();
        assert!((s.policy[0] - 0.5).abs() < 1e-12);
        assert!((s.j_r - 0.5).abs() < 1e-12);
        assert!((s.lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slack_constraint_has_zero_multiplier() {
        let m = FiniteCmdp::bandit(0.5, vec![1.0, 0.0], vec![0.1, 0.0]);
        let s = solve_constrained_lp(&m, 10.0).unwrap();
        assert_eq!(s.policy[0], 1.0);
        assert_eq!(s.lambda, 0.0);
        assert!((s.j_r - 2.0).abs() < 1e-12);
        let total: f64 = s.occupancy.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_threshold_reports_floor() {
        let m = FiniteCmdp::bandit(0.0, vec![1.0, 0.0], vec![1.0, 0.2]);
        match solve_constrained_lp(&m, 0.1) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("0.2"), "{msg}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert!((min_discounted_cost(&m).unwrap() - 0.2).abs() < 1e-12);
    }
}
