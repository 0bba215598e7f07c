use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::Policy;
use crate::envs::Environment;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    /// Quartiles of the episodic cost `[q1, median, q3]`.
    pub cost_quartiles: [f64; 3],
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Runs `n_episodes` episodes; episode `i` resets the environment with
/// seed `seed + i`. Population standard deviations.
pub fn evaluate_policy<E: Environment>(
    policy: &Policy,
    env: &mut E,
    n_episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<EvalSummary> {
    if n_episodes == 0 {
        return Err(invalid("need at least one evaluation episode"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rewards = Vec::with_capacity(n_episodes);
    let mut costs = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut s = env.reset(seed.wrapping_add(i as u64));
        let (mut r, mut c) = (0.0, 0.0);
        loop {
            let a = policy.act(&s, deterministic, &mut rng)?;
            let st = env.step(&a)?;
            r += st.reward;
            c += st.cost;
            s = st.next_state;
            if st.terminal {
                break;
            }
        }
        rewards.push(r);
        costs.push(c);
    }
    let (reward_mean, reward_std) = mean_std(&rewards);
    let (cost_mean, cost_std) = mean_std(&costs);
    costs.sort_by(f64::total_cmp);
    Ok(EvalSummary {
        episodes: n_episodes,
        reward_mean,
        reward_std,
        cost_mean,
        cost_std,
        cost_quartiles: [quantile(&costs, 0.25), quantile(&costs, 0.5), quantile(&costs, 0.75)],
    })
}
