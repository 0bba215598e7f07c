use cvpo::cmdp::Transition;
use cvpo::critics::CriticPair;
use cvpo::envs::{GridConfig, TabularHazardGrid};
use cvpo::oracle::{exact_policy_eval, FiniteCmdp};

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs full-sweep TD updates with a learning rate that makes each step an
/// exact Bellman backup, and returns the learned `(Q_r, Q_c)` tables.
fn sweep(m: &FiniteCmdp, pi: &[f64], terminal: Option<usize>, iters: usize) -> (Vec<f64>, Vec<f64>) {
    let (ns, na) = (m.n_states, m.n_actions);
    let mut batch = Vec::new();
    for s in 0..ns {
        if Some(s) == terminal {
            continue;
        }
        for a in 0..na {
            let row = m.row(s, a);
            let next = (0..ns).find(|&x| row[x] == 1.0).expect("deterministic model");
            batch.push(Transition {
                state: vec![s as f64],
                action: vec![a as f64],
                next_state: vec![next as f64],
                reward: m.r[m.sa(s, a)],
                cost: m.c[m.sa(s, a)],
                terminal: Some(next) == terminal,
            });
        }
    }
    let lr = batch.len() as f64 / 2.0;
    let mut cr = CriticPair::tabular(ns, na, lr, m.gamma).unwrap();
    let mut next = |s: &[f64]| -> Vec<(Vec<f64>, f64)> {
        let s = s[0] as usize;
        (0..na).map(|a| (vec![a as f64], pi[s * na + a])).collect()
    };
    for _ in 0..iters {
        cr.td_update(&batch, &mut next).unwrap();
        cr.polyak(0.0).unwrap();
    }
    let mut qr = Vec::new();
    let mut qc = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            qr.push(cr.q_r(&[s as f64], &[a as f64]));
            qc.push(cr.q_c(&[s as f64], &[a as f64]));
        }
    }
    (qr, qc)
}

#[test]
fn two_state_chain_reaches_exact_values() {
    // action 0 stays, action 1 switches; reward in state 0, cost in state 1
    let m = FiniteCmdp {
        n_states: 2,
        n_actions: 2,
        gamma: 0.9,
        p: vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
        r: vec![1.0, 1.0, 0.0, 0.0],
        c: vec![0.0, 0.0, 1.0, 1.0],
        rho0: vec![1.0, 0.0],
    };
    let pi = vec![0.3, 0.7, 0.6, 0.4];
    let exact = exact_policy_eval(&m, &pi).unwrap();
    let (qr, qc) = sweep(&m, &pi, None, 400);
    assert!(sup_gap(&qr, &exact.qr) < 1e-4);
    assert!(sup_gap(&qc, &exact.qc) < 1e-4);
}

#[test]
fn grid_fixed_policy_reaches_bellman_fixed_point() {
    let cfg = GridConfig {
        p_slip: 0.0,
        gamma: 0.99,
        ..GridConfig::default()
    };
    let grid = TabularHazardGrid::new(cfg).unwrap();
    let m = grid.model().clone();
    let na = m.n_actions;
    let pi: Vec<f64> = (0..m.n_states * na)
        .map(|i| [0.4, 0.3, 0.2, 0.1][i % na])
        .collect();
    let exact = exact_policy_eval(&m, &pi).unwrap();
    let (qr, qc) = sweep(&m, &pi, Some(grid.goal_state()), 3000);
    assert!(sup_gap(&qr, &exact.qr) < 1e-3);
    assert!(sup_gap(&qc, &exact.qc) < 1e-3);
}

#[test]
fn cost_free_environment_has_zero_cost_values() {
    let m = FiniteCmdp::bandit(0.5, vec![1.0, 0.0], vec![0.0, 0.0]);
    let (_, qc) = sweep(&m, &[0.5, 0.5], None, 50);
    assert!(qc.iter().all(|&x| x == 0.0));
}
