use serde::{Deserialize, Serialize};

use super::ParticleSet;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualStatus {
    Optimal,
    BoundaryLambdaZero,
    InfeasibleDetected,
    MaxIter,
}

impl DualStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            DualStatus::Optimal => "optimal",
            DualStatus::BoundaryLambdaZero => "boundary_lambda_zero",
            DualStatus::InfeasibleDetected => "infeasible_detected",
            DualStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub eta: f64,
    pub lam: f64,
    pub value: f64,
    /// Norm of the projected gradient at the returned point.
    pub grad_norm: f64,
    pub status: DualStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualOptions {
    pub eta_floor: f64,
    pub eta_max: f64,
    pub lambda_max: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            eta_floor: 1e-4,
            eta_max: 1e4,
            lambda_max: 1e3,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Softmax moments of one state's particles at `(eta, lambda)`.
struct Row {
    lse: f64,
    mean_x: f64,
    mean_c: f64,
    var_x: f64,
    var_c: f64,
    cov_xc: f64,
}

fn row(ps: &ParticleSet, b: usize, eta: f64, lam: f64, u: &mut [f64]) -> Row {
    let k = ps.k;
    let qr = &ps.qr[b * k..(b + 1) * k];
    let qc = &ps.qc[b * k..(b + 1) * k];
    let mut m = f64::NEG_INFINITY;
    for j in 0..k {
        u[j] = (qr[j] - lam * qc[j]) / eta + ps.log_base(b, j);
        m = m.max(u[j]);
    }
    let mut z = 0.0;
    for v in u.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    // Moments are taken relative to the first particle so that constant
    // rows give exactly zero spread.
    let x0 = qr[0] - lam * qc[0];
    let c0 = qc[0];
    let (mut mx, mut mc) = (0.0, 0.0);
    for j in 0..k {
        let s = u[j] / z;
        mx += s * ((qr[j] - lam * qc[j]) - x0);
        mc += s * (qc[j] - c0);
    }
    let (mut vx, mut vc, mut cxc) = (0.0, 0.0, 0.0);
    for j in 0..k {
        let s = u[j] / z;
        let dx = (qr[j] - lam * qc[j]) - x0 - mx;
        let dc = (qc[j] - c0) - mc;
        vx += s * dx * dx;
        vc += s * dc * dc;
        cxc += s * dx * dc;
    }
    Row {
        lse: m + z.ln(),
        mean_x: x0 + mx,
        mean_c: c0 + mc,
        var_x: vx,
        var_c: vc,
        cov_xc: cxc,
    }
}

fn check_args(ps: &ParticleSet, eta: f64, lam: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    if !(lam >= 0.0 && lam.is_finite()) {
        return Err(invalid(format!("lambda must be nonnegative, got {lam}")));
    }
    ps.validate()
}

/// `g(eta, lambda) = lambda eps1 + eta eps2 + eta sum_b w_b log sum_k p_bk exp((Qr - lambda Qc) / eta)`.
pub fn dual_value(ps: &ParticleSet, eta: f64, lam: f64, eps1: f64, eps2: f64) -> Result<f64> {
    check_args(ps, eta, lam)?;
    Ok(value_unchecked(ps, eta, lam, eps1, eps2))
}

fn value_unchecked(ps: &ParticleSet, eta: f64, lam: f64, eps1: f64, eps2: f64) -> f64 {
    let mut u = vec![0.0; ps.k];
    let mut acc = 0.0;
    for b in 0..ps.n_states {
        let k = ps.k;
        let mut m = f64::NEG_INFINITY;
        for j in 0..k {
            u[j] = (ps.qr[b * k + j] - lam * ps.qc[b * k + j]) / eta + ps.log_base(b, j);
            m = m.max(u[j]);
        }
        let z: f64 = u.iter().map(|v| (v - m).exp()).sum();
        acc += ps.state_weight(b) * (m + z.ln());
    }
    lam * eps1 + eta * eps2 + eta * acc
}

/// Gradient `[dg/dlambda, dg/deta]` and Hessian in the same order.
pub fn dual_derivatives(
    ps: &ParticleSet,
    eta: f64,
    lam: f64,
    eps1: f64,
    eps2: f64,
) -> Result<([f64; 2], [[f64; 2]; 2])> {
    check_args(ps, eta, lam)?;
    Ok(derivatives_unchecked(ps, eta, lam, eps1, eps2).1)
}

#[allow(clippy::type_complexity)]
fn derivatives_unchecked(
    ps: &ParticleSet,
    eta: f64,
    lam: f64,
    eps1: f64,
    eps2: f64,
) -> (f64, ([f64; 2], [[f64; 2]; 2])) {
    let mut u = vec![0.0; ps.k];
    let (mut lse, mut mc, mut mx_over) = (0.0, 0.0, 0.0);
    let (mut hll, mut hee, mut hle) = (0.0, 0.0, 0.0);
    for b in 0..ps.n_states {
        let w = ps.state_weight(b);
        let r = row(ps, b, eta, lam, &mut u);
        lse += w * r.lse;
        mc += w * r.mean_c;
        mx_over += w * (r.lse - r.mean_x / eta);
        hll += w * r.var_c;
        hee += w * r.var_x;
        hle += w * r.cov_xc;
    }
    let value = lam * eps1 + eta * eps2 + eta * lse;
    let grad = [eps1 - mc, eps2 + mx_over];
    let hess = [
        [hll / eta, hle / (eta * eta)],
        [hle / (eta * eta), hee / (eta * eta * eta)],
    ];
    (value, (grad, hess))
}

fn projected_grad(x: [f64; 2], g: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> [f64; 2] {
    let mut pg = g;
    for i in 0..2 {
        if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) {
            pg[i] = 0.0;
        }
    }
    pg
}

fn initial_eta(ps: &ParticleSet, eps2: f64, opts: &DualOptions) -> f64 {
    let mut var = 0.0;
    for b in 0..ps.n_states {
        let row = &ps.qr[b * ps.k..(b + 1) * ps.k];
        let mean: f64 = (0..ps.k).map(|j| ps.base_prob(b, j) * row[j]).sum();
        let v: f64 = (0..ps.k).map(|j| ps.base_prob(b, j) * (row[j] - mean).powi(2)).sum();
        var += ps.state_weight(b) * v;
    }
    let eta = if var > 0.0 {
        var.sqrt() / (2.0 * eps2.max(1e-8)).sqrt()
    } else {
        1.0
    };
    eta.clamp(opts.eta_floor * 10.0, opts.eta_max / 10.0)
}

/// Minimises the dual over `[eta_floor, eta_max] x [0, lambda_max]` by
/// projected Newton with Armijo backtracking and a gradient fallback.
pub fn solve_dual(ps: &ParticleSet, eps1: f64, eps2: f64, opts: &DualOptions) -> Result<DualSolution> {
    ps.validate()?;
    if !(eps2 >= 0.0 && eps2.is_finite()) || !eps1.is_finite() {
        return Err(invalid("thresholds must be finite, eps2 nonnegative"));
    }
    if !(opts.eta_floor > 0.0 && opts.eta_floor < opts.eta_max && opts.lambda_max > 0.0) {
        return Err(invalid("bad dual bounds"));
    }
    let lo = [0.0, opts.eta_floor];
    let hi = [opts.lambda_max, opts.eta_max];
    let proj = |x: [f64; 2]| [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])];
    // x = [lambda, eta]
    let mut x = [0.0, initial_eta(ps, eps2, opts)];
    let f = |x: [f64; 2]| value_unchecked(ps, x[1], x[0], eps1, eps2);
    let mut iterations = 0;
    let mut converged = false;
    let (mut value, (mut g, mut h)) = derivatives_unchecked(ps, x[1], x[0], eps1, eps2);
    let mut pg = projected_grad(x, g, lo, hi);
    while iterations < opts.max_iter {
        if pg[0].hypot(pg[1]) <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let free = [pg[0] != 0.0, pg[1] != 0.0];
        let newton = newton_direction(g, h, free);
        let mut accepted = None;
        for dir in [newton, Some([-pg[0], -pg[1]])].into_iter().flatten() {
            let mut t = 1.0;
            for _ in 0..60 {
                let cand = proj([x[0] + t * dir[0], x[1] + t * dir[1]]);
                let dec = g[0] * (cand[0] - x[0]) + g[1] * (cand[1] - x[1]);
                if cand != x && dec < 0.0 {
                    let fc = f(cand);
                    if fc <= value + 1e-4 * dec {
                        accepted = Some(cand);
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some(nx) = accepted else {
            break;
        };
        x = nx;
        (value, (g, h)) = derivatives_unchecked(ps, x[1], x[0], eps1, eps2);
        pg = projected_grad(x, g, lo, hi);
    }
    let grad_norm = pg[0].hypot(pg[1]);
    if grad_norm <= opts.tol {
        converged = true;
    }
    let status = if x[0] >= opts.lambda_max {
        DualStatus::InfeasibleDetected
    } else if !converged {
        DualStatus::MaxIter
    } else if x[0] == 0.0 {
        DualStatus::BoundaryLambdaZero
    } else {
        DualStatus::Optimal
    };
    Ok(DualSolution {
        eta: x[1],
        lam: x[0],
        value,
        grad_norm,
        status,
        iterations,
    })
}

/// Newton step restricted to the free coordinates; `None` if the reduced
/// Hessian is not safely positive definite.
fn newton_direction(g: [f64; 2], h: [[f64; 2]; 2], free: [bool; 2]) -> Option<[f64; 2]> {
    match free {
        [true, true] => {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if !(h[0][0] > 0.0 && h[1][1] > 0.0 && det > 1e-14 * h[0][0] * h[1][1]) {
                return None;
            }
            Some([
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(h[0][0] * g[1] - h[1][0] * g[0]) / det,
            ])
        }
        [true, false] => (h[0][0] > 0.0).then(|| [-g[0] / h[0][0], 0.0]),
        [false, true] => (h[1][1] > 0.0).then(|| [0.0, -g[1] / h[1][1]]),
        [false, false] => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_value() {
        let ps = ParticleSet::from_values(1, 2, vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let g = dual_value(&ps, 1.0, 1.0, 0.1, 0.1).unwrap();
        let expected = 0.2 + ((std::f64::consts::E + 1.0) / 2.0).ln();
        assert!((g - expected).abs() < 1e-15);
        assert!(dual_value(&ps, 0.0, 1.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn constant_reward_value() {
        let ps = ParticleSet::from_values(2, 3, vec![2.5; 6], vec![0.3; 6]).unwrap();
        let g = dual_value(&ps, 0.7, 0.0, 1.0, 0.1).unwrap();
        assert!((g - (0.07 + 2.5)).abs() < 1e-14);
    }

    #[test]
    fn zero_cost_derivatives() {
        let ps = ParticleSet::from_values(2, 3, vec![1.0, 0.0, 2.0, -1.0, 0.5, 0.2], vec![0.0; 6]).unwrap();
        let (g, h) = dual_derivatives(&ps, 0.9, 0.4, 0.37, 0.1).unwrap();
        assert_eq!(g[0], 0.37);
        assert_eq!(h[0][0], 0.0);
    }

    #[test]
    fn zero_cost_solution_has_zero_lambda() {
        let ps = ParticleSet::from_values(2, 3, vec![1.0, 0.0, 2.0, -1.0, 0.5, 0.2], vec![0.0; 6]).unwrap();
        let s = solve_dual(&ps, 0.5, 0.1, &DualOptions::default()).unwrap();
        assert_eq!(s.lam, 0.0);
        assert_eq!(s.status, DualStatus::BoundaryLambdaZero);
        assert!(s.grad_norm <= 1e-8);
    }

    #[test]
    fn infeasible_instance_flagged() {
        let ps = ParticleSet::from_values(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![2.0, 3.0, 2.5, 2.0]).unwrap();
        let s = solve_dual(&ps, 1.0, 1e-3, &DualOptions::default()).unwrap();
        assert_eq!(s.status, DualStatus::InfeasibleDetected);
    }
}
