mod common;

use common::{particles, random_estep, tv};
use cvpo::estep::{
    cost_minimizing_weights, dual_derivatives, dual_value, min_feasible_cost, solve_dual, variational_weights,
    DualOptions, DualStatus,
};
use cvpo::oracle::{brute_force_estep, brute_min_cost};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_form_weights_match_direct_optimisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 20 {
        let a = rng.random_range(2..=6);
        let b = rng.random_range(1..=6);
        let p = random_estep(&mut rng, b, a);
        let ps = particles(&p);
        let eps2 = rng.random_range(0.02..0.5);
        let floor = min_feasible_cost(&ps, eps2).unwrap();
        let eps1 = floor + rng.random_range(0.02..0.3);
        let sol = solve_dual(&ps, eps1, eps2, &DualOptions::default()).unwrap();
        assert!(matches!(sol.status, DualStatus::Optimal | DualStatus::BoundaryLambdaZero));
        let w = variational_weights(&ps, &sol).unwrap();
        let brute = brute_force_estep(&p, eps1, eps2).unwrap();
        let d = tv(&w.w, &brute.q, a);
        assert!(d < 1e-3, "instance {checked}: tv {d}");
        checked += 1;
    }
}

#[test]
fn slater_floor_matches_direct_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let p = random_estep(&mut rng, 4, 5);
        let ps = particles(&p);
        let floor = min_feasible_cost(&ps, 0.1).unwrap();
        let (brute, _) = brute_min_cost(&p, 0.1).unwrap();
        assert!((floor - brute).abs() < 1e-6, "{floor} vs {brute}");
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let p = random_estep(&mut rng, 5, 6);
        let ps = particles(&p);
        let (eta, lam) = (rng.random_range(0.1..2.0), rng.random_range(0.0..3.0));
        let (g, _) = dual_derivatives(&ps, eta, lam, 0.4, 0.1).unwrap();
        let h = 1e-6;
        let f = |e: f64, l: f64| dual_value(&ps, e, l, 0.4, 0.1).unwrap();
        let d_lam = (f(eta, lam + h) - f(eta, lam - h)) / (2.0 * h);
        let d_eta = (f(eta + h, lam) - f(eta - h, lam)) / (2.0 * h);
        assert!((g[0] - d_lam).abs() <= 1e-4 * d_lam.abs().max(1e-2));
        assert!((g[1] - d_eta).abs() <= 1e-4 * d_eta.abs().max(1e-2));
    }
}

#[test]
fn active_constraint_is_met_with_equality() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut active = 0;
    for _ in 0..30 {
        let p = random_estep(&mut rng, 6, 4);
        let ps = particles(&p);
        let floor = min_feasible_cost(&ps, 0.1).unwrap();
        let eps1 = floor + 0.02;
        let sol = solve_dual(&ps, eps1, 0.1, &DualOptions::default()).unwrap();
        let w = variational_weights(&ps, &sol).unwrap();
        if sol.lam > 1e-3 {
            active += 1;
            assert!((ps.weighted_cost(&w) - eps1).abs() < 1e-3);
        }
        assert!(ps.kl_to_base(&w) <= 0.1 + 1e-6);
    }
    assert!(active > 10);
}

#[test]
fn unreachable_threshold_is_flagged_and_fallback_lowers_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = random_estep(&mut rng, 3, 5);
    let ps = particles(&p);
    let floor = min_feasible_cost(&ps, 0.01).unwrap();
    let sol = solve_dual(&ps, floor - 0.05, 0.01, &DualOptions::default()).unwrap();
    assert_eq!(sol.status, DualStatus::InfeasibleDetected);
    let (w, _) = cost_minimizing_weights(&ps, 0.01).unwrap();
    let old = p.expect(&p.pi_old, &p.qc);
    assert!(ps.weighted_cost(&w) < old);
    assert!((ps.weighted_cost(&w) - floor).abs() < 1e-6);
}
