use std::f64::consts::E;

use crate::error::{invalid, Result};

/// Lambert W on branch `0` or `-1`: the `w` with `w e^w = x`.
pub fn lambert_w(branch: i32, x: f64) -> Result<f64> {
    let edge = -1.0 / E;
    if !(x >= edge) || x.is_nan() {
        return Err(invalid(format!("Lambert W undefined at {x} (< -1/e)")));
    }
    match branch {
        0 => {}
        -1 if x < 0.0 => {}
        -1 => return Err(invalid("branch -1 requires x < 0")),
        _ => return Err(invalid(format!("unknown Lambert W branch {branch}"))),
    }
    if x == edge {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
    let mut w = if branch == 0 {
        if x < -0.25 {
            -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
        } else if x < 3.0 {
            x.ln_1p()
        } else {
            let l1 = x.ln();
            l1 - l1.ln()
        }
    } else if x < -0.25 {
        -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let d = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / d;
        w -= step;
        if step.abs() <= 1e-15 * w.abs().max(1e-300) {
            break;
        }
    }
    Ok(w)
}

/// Upper bound on the KL between policies two trust-region steps apart
/// when each step moves at most `eps` in KL.
pub fn two_step_kl_bound(eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(invalid("KL step must be nonnegative"));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    let z = -(-1.0 - 2.0 * eps).exp();
    let wm = lambert_w(-1, z)?;
    let w0 = lambert_w(0, z)?;
    let s = (2.0 * eps / -w0).sqrt() + (2.0 * eps).sqrt();
    Ok(2.0 * eps + 0.5 * ((wm + 1.0).powi(2) - wm * s * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(lambert_w(0, -1.0 / E).unwrap(), -1.0);
        assert_eq!(lambert_w(-1, -1.0 / E).unwrap(), -1.0);
        assert_eq!(lambert_w(0, 0.0).unwrap(), 0.0);
        let w = lambert_w(0, 1.0).unwrap();
        assert!((w - 0.567_143_290_409_783_8).abs() < 1e-14);
        assert!(lambert_w(0, -0.5).is_err());
        assert!(lambert_w(-1, 0.5).is_err());
    }

    #[test]
    fn residuals_across_domain() {
        let mut xs: Vec<f64> = (1..400).map(|i| -1.0 / E + i as f64 * 1e-3).collect();
        xs.extend([1.0, 10.0, 1e3, 1e8, -1.0 / E + 1e-12]);
        for &x in &xs {
            let w = lambert_w(0, x).unwrap();
            assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0), "W0({x})");
            assert!(w >= -1.0);
            if x < 0.0 {
                let w = lambert_w(-1, x).unwrap();
                assert!((w * w.exp() - x).abs() <= 1e-12, "W-1({x})");
                assert!(w <= -1.0);
            }
        }
    }

    #[test]
    fn two_step_bound_shape() {
        assert_eq!(two_step_kl_bound(0.0).unwrap(), 0.0);
        let r = two_step_kl_bound(1e-4).unwrap() / 8e-4;
        assert!((0.85..=1.15).contains(&r), "{r}");
        let mut last = 0.0;
        for i in 1..=20 {
            let b = two_step_kl_bound(0.01 * i as f64 / 20.0).unwrap();
            assert!(b > last);
            last = b;
        }
    }
}
