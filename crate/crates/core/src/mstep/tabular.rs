use crate::error::{invalid, Error, Result};
use crate::policy::TabularPolicy;

fn kl_row(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            // mass this small contributes below double precision
            if a < 1e-300 {
                0.0
            } else if b == 0.0 {
                f64::INFINITY
            } else {
                a * (a / b).ln()
            }
        })
        .sum()
}

/// State-weighted mean `KL(p(.|s) || q(.|s))` of two row-major tables.
/// `weights = None` averages uniformly.
pub fn mean_kl(p: &[f64], q: &[f64], n_actions: usize, weights: Option<&[f64]>) -> Result<f64> {
    if n_actions == 0 || p.len() != q.len() || p.len() % n_actions != 0 {
        return Err(Error::Dimension {
            what: "policy table",
            expected: p.len(),
            got: q.len(),
        });
    }
    let n = p.len() / n_actions;
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Dimension {
                what: "state weights",
                expected: n,
                got: w.len(),
            });
        }
    }
    Ok((0..n)
        .map(|s| {
            let w = weights.map_or(1.0 / n as f64, |w| w[s]);
            if w == 0.0 {
                return 0.0;
            }
            let r = s * n_actions..(s + 1) * n_actions;
            w * kl_row(&p[r.clone()], &q[r])
        })
        .sum())
}

fn mix(old: &[f64], q: &[f64], t: f64) -> Vec<f64> {
    old.iter().zip(q).map(|(a, b)| (1.0 - t) * a + t * b).collect()
}

/// Exact KL-constrained projection of a tabular policy onto the targets `q`:
/// maximises `sum_s w_s sum_a q log pi` subject to the weighted mean
/// `KL(pi_old || pi) <= eps`. The maximiser is the mixture
/// `(1 - t) pi_old + t q` with one `t` for all states, found by bisection.
/// Returns the new policy and `t`.
pub fn exact_tabular_mstep(
    pi_old: &TabularPolicy,
    q: &[f64],
    weights: Option<&[f64]>,
    eps: f64,
) -> Result<(TabularPolicy, f64)> {
    let a = pi_old.n_actions;
    let old = pi_old.table();
    if q.len() != old.len() {
        return Err(Error::Dimension {
            what: "target table",
            expected: old.len(),
            got: q.len(),
        });
    }
    if !(eps >= 0.0) {
        return Err(invalid("KL budget must be nonnegative"));
    }
    for row in q.chunks(a) {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(invalid("target rows must be distributions"));
        }
    }
    if eps == 0.0 {
        return Ok((TabularPolicy::from_probs(a, &old)?, 0.0));
    }
    let kl = |t: f64| mean_kl(&old, &mix(&old, q, t), a, weights);
    if kl(1.0)? <= eps {
        return Ok((TabularPolicy::from_probs(a, q)?, 1.0));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kl(mid)? <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    Ok((TabularPolicy::from_probs(a, &mix(&old, q, lo))?, lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (TabularPolicy, Vec<f64>) {
        let old = TabularPolicy::from_probs(3, &[0.2, 0.3, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        (old, vec![0.7, 0.2, 0.1, 0.05, 0.05, 0.9])
    }

    #[test]
    fn limits() {
        let (old, q) = setup();
        let (p, t) = exact_tabular_mstep(&old, &q, None, f64::INFINITY).unwrap();
        assert_eq!(t, 1.0);
        assert!(p.table().iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-12));
        let (p, t) = exact_tabular_mstep(&old, &q, None, 0.0).unwrap();
        assert_eq!(t, 0.0);
        assert!(p.table().iter().zip(old.table()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn binding_budget_is_met() {
        let (old, q) = setup();
        let w = [0.3, 0.7];
        let (p, t) = exact_tabular_mstep(&old, &q, Some(&w), 0.05).unwrap();
        assert!(t > 0.0 && t < 1.0);
        let kl = mean_kl(&old.table(), &p.table(), 3, Some(&w)).unwrap();
        assert!((kl - 0.05).abs() < 1e-6, "{kl}");
    }

    #[test]
    fn mixture_beats_other_points_in_the_ball() {
        let (old, q) = setup();
        let eps = 0.03;
        let (p, _) = exact_tabular_mstep(&old, &q, None, eps).unwrap();
        let ce = |t: &[f64]| -> f64 { q.iter().zip(t).map(|(a, b)| a * b.ln()).sum() };
        let best = ce(&p.table());
        let o = old.table();
        for i in 0..200 {
            // random-ish perturbations toward other simplex points
            let dir: Vec<f64> = (0..6).map(|j| ((i * 7 + j * 13) % 11) as f64 + 0.5).collect();
            let mut cand = Vec::new();
            for s in 0..2 {
                let z: f64 = dir[s * 3..s * 3 + 3].iter().sum();
                cand.extend(dir[s * 3..s * 3 + 3].iter().map(|d| d / z));
            }
            for step in [0.05, 0.1, 0.2, 0.4] {
                let c = mix(&o, &cand, step);
                if mean_kl(&o, &c, 3, None).unwrap() <= eps {
                    assert!(ce(&c) <= best + 1e-9);
                }
            }
        }
    }
}
