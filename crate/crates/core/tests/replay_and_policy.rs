use cvpo::cmdp::{ReplayBuffer, Transition};
use cvpo::envs::{Environment, GridConfig, TabularHazardGrid};
use cvpo::policy::{kl_decomposed, DiagGaussian};
use proptest::prelude::*;

fn grid_buffer(n: usize, cap: usize) -> ReplayBuffer {
    let env = TabularHazardGrid::new(GridConfig::default()).unwrap();
    let mut buf = ReplayBuffer::new(env.spec().clone(), cap, 3, 1).unwrap();
    for i in 0..n {
        buf.push(Transition {
            state: vec![i as f64],
            action: vec![0.0],
            next_state: vec![i as f64],
            reward: 0.0,
            cost: 0.0,
            terminal: false,
        })
        .unwrap();
    }
    buf
}

#[test]
fn sampling_is_uniform() {
    let mut buf = grid_buffer(10, 10);
    let draws = 100_000;
    let mut counts = [0usize; 10];
    for _ in 0..draws {
        counts[buf.sample_batch(1).unwrap()[0].state[0] as usize] += 1;
    }
    let p = 0.1;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() <= 5.0 * sd, "{counts:?}");
    }
}

#[test]
fn full_batch_is_a_permutation() {
    let mut buf = grid_buffer(20, 20);
    let mut seen: Vec<usize> = buf.sample_batch(20).unwrap().iter().map(|t| t.state[0] as usize).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..20).collect::<Vec<_>>());
}

#[test]
fn oldest_entries_are_evicted() {
    let buf = grid_buffer(15, 10);
    assert_eq!(buf.len(), 10);
    assert!(buf.iter().all(|t| t.state[0] >= 5.0));
}

#[test]
fn oversized_batch_is_rejected() {
    let mut buf = grid_buffer(3, 10);
    assert!(buf.sample_batch(4).is_err());
}

fn gaussian(dim: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        prop::collection::vec(-3.0f64..3.0, dim),
        prop::collection::vec(0.05f64..4.0, dim),
    )
        .prop_map(|(mean, var)| DiagGaussian { mean, var })
}

fn pair() -> impl Strategy<Value = (DiagGaussian, DiagGaussian)> {
    (1usize..=6).prop_flat_map(|d| (gaussian(d), gaussian(d)))
}

proptest! {
    #[test]
    fn decomposed_kl_sums_to_exact((old, new) in pair()) {
        let (cm, cs) = kl_decomposed(std::slice::from_ref(&old), std::slice::from_ref(&new)).unwrap();
        let exact = old.kl(&new).unwrap();
        prop_assert!((cm + cs - exact).abs() <= 1e-10 * exact.max(1.0));
        prop_assert!(cm >= -1e-15 && cs >= -1e-15);
    }

    #[test]
    fn kl_is_zero_only_on_the_diagonal(p in gaussian(3)) {
        prop_assert!(p.kl(&p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn log_density_integrates_consistently(p in gaussian(2), a in prop::collection::vec(-5.0f64..5.0, 2)) {
        // log N(a) = -0.5 sum((a-m)^2/v + ln(2 pi v))
        let manual: f64 = (0..2)
            .map(|i| -0.5 * ((a[i] - p.mean[i]).powi(2) / p.var[i] + (2.0 * std::f64::consts::PI * p.var[i]).ln()))
            .sum();
        prop_assert!((p.log_prob(&a).unwrap() - manual).abs() < 1e-10);
    }
}
