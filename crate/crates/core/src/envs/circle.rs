use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Environment, Step};
use crate::cmdp::{ActionSpace, CmdpSpec, StateSpace};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleConfig {
    pub radius: f64,
    /// Half-width of the safe band `|x| <= x_lim`.
    pub x_lim: f64,
    pub dt: f64,
    /// Linear velocity damping per unit time; zero gives a pure double integrator.
    pub drag: f64,
    /// Standard deviation of the initial position, clipped to `init_box`.
    pub init_std: f64,
    pub init_box: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub episodic_cost_limit: f64,
}

impl Default for CircleConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            x_lim: 0.7,
            dt: 0.1,
            drag: 0.0,
            init_std: 0.05,
            init_box: 0.1,
            gamma: 0.99,
            horizon: 300,
            episodic_cost_limit: 5.0,
        }
    }
}

/// Planar point mass rewarded for circulating near radius `R` and charged a
/// unit cost whenever it leaves the vertical band `|x| <= x_lim`.
///
/// State is `(x, y, vx, vy)`; the action is a 2-D acceleration clipped to
/// `[-1, 1]^2`. One step integrates positions with the old velocity and then
/// velocities with the action (explicit Euler).
#[derive(Debug, Clone)]
pub struct PointCircle {
    cfg: CircleConfig,
    spec: CmdpSpec,
    state: [f64; 4],
    t: usize,
    done: bool,
}

impl PointCircle {
    pub fn new(cfg: CircleConfig) -> Result<Self> {
        if !(cfg.radius > 0.0 && cfg.x_lim > 0.0 && cfg.dt > 0.0) {
            return Err(invalid("radius, x_lim and dt must be positive"));
        }
        if !(cfg.drag >= 0.0 && cfg.init_std >= 0.0 && cfg.init_box >= 0.0) {
            return Err(invalid("drag and init noise must be nonnegative"));
        }
        let spec = CmdpSpec {
            state_space: StateSpace::Continuous { dim: 4 },
            action_space: ActionSpace::Box {
                low: vec![-1.0; 2],
                high: vec![1.0; 2],
            },
            gamma: cfg.gamma,
            episode_limit: cfg.horizon,
            episodic_cost_limit: cfg.episodic_cost_limit,
        };
        spec.validate()?;
        Ok(Self {
            cfg,
            spec,
            state: [0.0; 4],
            t: 0,
            done: false,
        })
    }

    pub fn config(&self) -> &CircleConfig {
        &self.cfg
    }

    /// Circulation reward `(x vy - y vx) / (1 + | |(x, y)| - R |)`.
    pub fn reward_at(&self, s: &[f64; 4]) -> f64 {
        let [x, y, vx, vy] = *s;
        let dist = (x.hypot(y) - self.cfg.radius).abs();
        (-y * vx + x * vy) / (1.0 + dist)
    }

    pub fn cost_at(&self, s: &[f64; 4]) -> f64 {
        if s[0].abs() > self.cfg.x_lim {
            1.0
        } else {
            0.0
        }
    }

    /// Overrides the current state, e.g. to probe the dynamics.
    pub fn set_state(&mut self, s: [f64; 4]) {
        self.state = s;
        self.done = false;
    }
}

impl Environment for PointCircle {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = self.cfg.init_box;
        let mut draw = || {
            if self.cfg.init_std == 0.0 {
                0.0
            } else {
                let n = Normal::new(0.0, self.cfg.init_std).expect("positive std");
                n.sample(&mut rng).clamp(-b, b)
            }
        };
        let (x, y) = (draw(), draw());
        self.state = [x, y, 0.0, 0.0];
        self.t = 0;
        self.done = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if action.len() != 2 {
            return Err(Error::Dimension {
                what: "action",
                expected: 2,
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(invalid("action must be finite"));
        }
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        let dt = self.cfg.dt;
        let [x, y, vx, vy] = self.state;
        let damp = 1.0 - self.cfg.drag * dt;
        let next = [x + vx * dt, y + vy * dt, vx * damp + ax * dt, vy * damp + ay * dt];
        self.state = next;
        self.t += 1;
        let truncated = self.t >= self.cfg.horizon;
        self.done = truncated;
        Ok(Step {
            next_state: next.to_vec(),
            reward: self.reward_at(&next),
            cost: self.cost_at(&next),
            terminal: truncated,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_on_unit_circle() {
        let env = PointCircle::new(CircleConfig::default()).unwrap();
        assert_eq!(env.reward_at(&[1.0, 0.0, 0.0, 1.0]), 1.0);
        // clockwise motion is penalised symmetrically
        assert_eq!(env.reward_at(&[1.0, 0.0, 0.0, -1.0]), -1.0);
    }

    #[test]
    fn leaving_band_costs_one() {
        let mut env = PointCircle::new(CircleConfig::default()).unwrap();
        env.reset(0);
        // x' = 0.6 + 1.1 * 0.1 = 0.71 = x_lim + 0.01
        env.set_state([0.6, 0.0, 1.1, 0.0]);
        let s = env.step(&[0.0, 0.0]).unwrap();
        assert!((s.next_state[0] - 0.71).abs() < 1e-12);
        assert_eq!(s.cost, 1.0);
        env.set_state([0.0, 0.0, 0.0, 0.0]);
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().cost, 0.0);
    }

    #[test]
    fn reset_region_and_determinism() {
        let mut env = PointCircle::new(CircleConfig::default()).unwrap();
        let a = env.reset(0);
        let b = env.reset(0);
        assert_eq!(a, b);
        for seed in 0..200 {
            let s = env.reset(seed);
            assert!(s[0].abs() <= 0.1 && s[1].abs() <= 0.1);
            assert_eq!((s[2], s[3]), (0.0, 0.0));
        }
    }

    #[test]
    fn actions_are_clipped() {
        let mut env = PointCircle::new(CircleConfig::default()).unwrap();
        env.set_state([0.0; 4]);
        let s = env.step(&[5.0, -7.0]).unwrap();
        assert!((s.next_state[2] - 0.1).abs() < 1e-15);
        assert!((s.next_state[3] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn episodic_cost_counts_out_of_band_steps() {
        let mut env = PointCircle::new(CircleConfig {
            horizon: 60,
            ..CircleConfig::default()
        })
        .unwrap();
        env.reset(3);
        let mut cost = 0.0;
        let mut outside = 0;
        loop {
            let s = env.step(&[1.0, 0.3]).unwrap();
            cost += s.cost;
            if s.next_state[0].abs() > 0.7 {
                outside += 1;
            }
            if s.terminal {
                assert!(s.truncated);
                break;
            }
        }
        assert_eq!(cost, outside as f64);
        assert!(outside > 0);
    }
}
