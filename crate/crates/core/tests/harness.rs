use std::fs;

use cvpo::harness::{
    convergence_window, emit_plotdata, evaluate_policy, load_checkpoint, read_metrics, run_training, window_summary,
    Algo, EnvName, TrainConfig, COLUMNS,
};
use cvpo::Error;

fn grid_cfg(algo: Algo, seed: u64) -> TrainConfig {
    TrainConfig {
        env: EnvName::Grid,
        algo,
        seed,
        epochs: 6,
        rollouts: 4,
        updates: 5,
        batch: 50,
        ..TrainConfig::default()
    }
}

fn circle_cfg(algo: Algo) -> TrainConfig {
    TrainConfig {
        env: EnvName::Circle,
        algo,
        epochs: 3,
        rollouts: 1,
        updates: 2,
        batch: 64,
        particles: 8,
        hidden: 16,
        horizon: Some(100),
        ..TrainConfig::default()
    }
}

#[test]
fn grid_runs_write_finite_metrics_for_both_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    for algo in [Algo::Cvpo, Algo::Pd] {
        let out = dir.path().join(algo.to_string());
        let path = run_training(&grid_cfg(algo, 1), &out).unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 6);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.epoch, i + 1);
            assert_eq!(r.episodes, 4 * (i + 1));
            assert!(r.numeric().iter().all(|v| v.is_finite()));
            assert!(r.lambda >= 0.0);
        }
        assert!(out.join("ckpt").join("manifest.json").exists());
    }
}

#[test]
fn step_accounting_matches_episode_lengths() {
    // without slip and with a horizon shorter than any route, every
    // episode is truncated at exactly `horizon` steps
    let cfg = TrainConfig {
        p_slip: 0.0,
        horizon: Some(3),
        ..grid_cfg(Algo::Cvpo, 2)
    };
    let dir = tempfile::tempdir().unwrap();
    let rows = read_metrics(&run_training(&cfg, dir.path()).unwrap()).unwrap();
    for r in &rows {
        assert_eq!(r.env_steps, r.epoch * cfg.rollouts * 3);
    }
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for (name, cfg) in [("grid", grid_cfg(Algo::Cvpo, 7)), ("circle", circle_cfg(Algo::Cvpo))] {
        let a = run_training(&cfg, &dir.path().join(format!("{name}_a"))).unwrap();
        let b = run_training(&cfg, &dir.path().join(format!("{name}_b"))).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{name}");
    }
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_training(&grid_cfg(Algo::Cvpo, 1), &dir.path().join("a")).unwrap();
    let b = run_training(&grid_cfg(Algo::Cvpo, 2), &dir.path().join("b")).unwrap();
    assert_ne!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn pd_and_cvpo_share_the_schema_on_the_circle() {
    let dir = tempfile::tempdir().unwrap();
    for algo in [Algo::Cvpo, Algo::Pd] {
        let path = run_training(&circle_cfg(algo), &dir.path().join(algo.to_string())).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 3);
        if algo == Algo::Pd {
            assert!(rows.iter().all(|r| r.beta_mu == 0.0 && r.eta == 0.0));
        }
    }
}

#[test]
fn checkpoint_reloads_and_evaluates_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = circle_cfg(Algo::Cvpo);
    run_training(&cfg, dir.path()).unwrap();
    let (loaded, policy) = load_checkpoint(&dir.path().join("ckpt")).unwrap();
    assert_eq!(loaded, cfg);
    let mut env = loaded.build_env().unwrap();
    let a = evaluate_policy(&policy, &mut env, 3, 9, true).unwrap();
    let b = evaluate_policy(&policy, &mut env, 3, 9, true).unwrap();
    assert_eq!(a, b);
    let single = evaluate_policy(&policy, &mut env, 1, 4, false).unwrap();
    assert_eq!(single.cost_quartiles[0], single.cost_quartiles[2]);
    assert_eq!(single.cost_std, 0.0);
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..grid_cfg(Algo::Pd, 3)
    };
    run_training(&cfg, dir.path()).unwrap();
    for e in [2, 4, 6] {
        assert!(dir.path().join(format!("ckpt_{e:05}")).is_dir());
    }
}

#[test]
fn plotdata_aggregates_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for seed in 0..3 {
        for algo in [Algo::Cvpo, Algo::Pd] {
            let out = dir.path().join(format!("{algo}_{seed}"));
            paths.push(run_training(&grid_cfg(algo, seed), &out).unwrap());
        }
    }
    let files = emit_plotdata(&paths, &dir.path().join("plots")).unwrap();
    let long = fs::read_to_string(&files.long).unwrap();
    assert_eq!(long.lines().count(), 1 + 6 * 6);
    let agg = fs::read_to_string(&files.aggregate).unwrap();
    let head = agg.lines().next().unwrap();
    assert!(head.contains("n_seeds") && head.contains("ep_cost_std"), "{head}");
    assert_eq!(agg.lines().count(), 1 + 2 * 6);
    assert!(fs::read_to_string(&files.reward_vs_cost).unwrap().lines().count() > 1);
    let conv = fs::read_to_string(&files.convergence).unwrap();
    assert!(conv.lines().any(|l| l.contains(",all,")), "{conv}");
}

#[test]
fn plotdata_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n").unwrap();
    assert!(matches!(emit_plotdata(&[bad], &dir.path().join("o")), Err(Error::Schema(_))));
}

#[test]
fn window_covers_final_fifth() {
    assert_eq!(convergence_window(100), (81, 100));
    assert_eq!(convergence_window(17), (14, 17));
    assert_eq!(convergence_window(1), (1, 1));
    let dir = tempfile::tempdir().unwrap();
    let rows = read_metrics(&run_training(&grid_cfg(Algo::Cvpo, 4), dir.path()).unwrap()).unwrap();
    let w = window_summary(&rows).unwrap();
    assert_eq!((w.first, w.last), (5, 6));
    assert!(w.cost_q1 <= w.cost_median && w.cost_median <= w.cost_q3);
}

#[test]
fn unattainable_cost_limit_aborts() {
    let cfg = TrainConfig {
        cost_limit: Some(0.0),
        abort_after: 2,
        epochs: 60,
        ..grid_cfg(Algo::Cvpo, 5)
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_training(&cfg, dir.path()), Err(Error::Infeasible(_))));
}
