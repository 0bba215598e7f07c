#![allow(dead_code)]

use cvpo::estep::ParticleSet;
use cvpo::oracle::{DiscreteEstep, FiniteCmdp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random E-step instance with `b` states and `a` actions: a strictly
/// positive old policy and uniform critic values.
pub fn random_estep(rng: &mut ChaCha8Rng, b: usize, a: usize) -> DiscreteEstep {
    let mut pi_old = Vec::with_capacity(b * a);
    for _ in 0..b {
        let row: Vec<f64> = (0..a).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = row.iter().sum();
        pi_old.extend(row.iter().map(|x| x / s));
    }
    let qr = (0..b * a).map(|_| rng.random_range(-1.0..1.0)).collect();
    let qc = (0..b * a).map(|_| rng.random_range(0.0..1.0)).collect();
    DiscreteEstep {
        n_actions: a,
        pi_old,
        qr,
        qc,
        weights: None,
    }
}

pub fn particles(p: &DiscreteEstep) -> ParticleSet {
    ParticleSet::from_values(p.n_states(), p.n_actions, p.qr.clone(), p.qc.clone())
        .unwrap()
        .with_base(p.pi_old.clone())
        .unwrap()
}

/// Random dense CMDP with nonnegative costs.
pub fn random_cmdp(rng: &mut ChaCha8Rng, n_s: usize, n_a: usize, gamma: f64) -> FiniteCmdp {
    let mut p = Vec::with_capacity(n_s * n_a * n_s);
    for _ in 0..n_s * n_a {
        let row: Vec<f64> = (0..n_s).map(|_| rng.random::<f64>().powi(3)).collect();
        let s: f64 = row.iter().sum();
        p.extend(row.iter().map(|x| x / s));
    }
    let mut rho0 = vec![0.0; n_s];
    rho0[0] = 1.0;
    FiniteCmdp {
        n_states: n_s,
        n_actions: n_a,
        gamma,
        p,
        r: (0..n_s * n_a).map(|_| rng.random::<f64>()).collect(),
        c: (0..n_s * n_a).map(|_| rng.random::<f64>()).collect(),
        rho0,
    }
}

pub fn tv(p: &[f64], q: &[f64], n_actions: usize) -> f64 {
    p.chunks(n_actions)
        .zip(q.chunks(n_actions))
        .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
