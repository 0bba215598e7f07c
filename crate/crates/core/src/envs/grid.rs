use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Step};
use crate::cmdp::{ActionSpace, CmdpSpec, StateSpace};
use crate::error::{invalid, Error, Result};
use crate::oracle::FiniteCmdp;

/// Cell offsets for actions up, right, down, left.
pub const ACTION_DELTAS: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    /// `(x, y)` cells.
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub hazards: Vec<(usize, usize)>,
    /// With this probability the move is replaced by a uniformly random one.
    pub p_slip: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub episodic_cost_limit: f64,
}

impl Default for GridConfig {
    /// 5x5 board with a column of hazards between start and goal; the short
    /// route crosses one hazard, the detour around it is four steps longer.
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            start: (0, 2),
            goal: (4, 2),
            hazards: vec![(2, 1), (2, 2), (2, 3)],
            p_slip: 0.1,
            gamma: 0.95,
            horizon: 50,
            episodic_cost_limit: 1.0,
        }
    }
}

/// Small gridworld: reward 1 on entering the goal (which ends the episode),
/// cost 1 on every entry into a hazard cell.
#[derive(Debug, Clone)]
pub struct TabularHazardGrid {
    cfg: GridConfig,
    spec: CmdpSpec,
    model: FiniteCmdp,
    state: usize,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl TabularHazardGrid {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        let in_grid = |(x, y): (usize, usize)| x < cfg.width && y < cfg.height;
        if cfg.width == 0 || cfg.height == 0 || cfg.width > 8 || cfg.height > 8 {
            return Err(invalid("grid sides must lie in 1..=8"));
        }
        if !in_grid(cfg.start) || !in_grid(cfg.goal) || !cfg.hazards.iter().all(|&h| in_grid(h)) {
            return Err(invalid("grid cell outside the board"));
        }
        if cfg.start == cfg.goal || cfg.hazards.contains(&cfg.goal) || cfg.hazards.contains(&cfg.start)
        {
            return Err(invalid("start, goal and hazards must be distinct cells"));
        }
        if !(0.0..1.0).contains(&cfg.p_slip) {
            return Err(invalid("slip probability must lie in [0, 1)"));
        }
        let spec = CmdpSpec {
            state_space: StateSpace::Finite {
                count: cfg.width * cfg.height,
            },
            action_space: ActionSpace::Finite { count: 4 },
            gamma: cfg.gamma,
            episode_limit: cfg.horizon,
            episodic_cost_limit: cfg.episodic_cost_limit,
        };
        spec.validate()?;
        let model = build_model(&cfg);
        let start = cell_index(&cfg, cfg.start);
        Ok(Self {
            cfg,
            spec,
            model,
            state: start,
            t: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    /// Exact tabular model; the goal is absorbing with zero reward and cost.
    pub fn model(&self) -> &FiniteCmdp {
        &self.model
    }

    pub fn start_state(&self) -> usize {
        cell_index(&self.cfg, self.cfg.start)
    }

    pub fn goal_state(&self) -> usize {
        cell_index(&self.cfg, self.cfg.goal)
    }

    pub fn is_hazard(&self, s: usize) -> bool {
        self.cfg.hazards.iter().any(|&h| cell_index(&self.cfg, h) == s)
    }
}

fn cell_index(cfg: &GridConfig, (x, y): (usize, usize)) -> usize {
    y * cfg.width + x
}

fn shift(cfg: &GridConfig, s: usize, action: usize) -> usize {
    let (x, y) = ((s % cfg.width) as i64, (s / cfg.width) as i64);
    let (dx, dy) = ACTION_DELTAS[action];
    let (nx, ny) = (x + dx, y + dy);
    if nx < 0 || ny < 0 || nx >= cfg.width as i64 || ny >= cfg.height as i64 {
        s
    } else {
        ny as usize * cfg.width + nx as usize
    }
}

fn build_model(cfg: &GridConfig) -> FiniteCmdp {
    let n_s = cfg.width * cfg.height;
    let n_a = ACTION_DELTAS.len();
    let goal = cell_index(cfg, cfg.goal);
    let hazard: Vec<bool> = (0..n_s)
        .map(|s| cfg.hazards.iter().any(|&h| cell_index(cfg, h) == s))
        .collect();
    let mut p = vec![0.0; n_s * n_a * n_s];
    let mut r = vec![0.0; n_s * n_a];
    let mut c = vec![0.0; n_s * n_a];
    let slip = cfg.p_slip / n_a as f64;
    for s in 0..n_s {
        for a in 0..n_a {
            let base = (s * n_a + a) * n_s;
            if s == goal {
                p[base + goal] = 1.0;
                continue;
            }
            let row = &mut p[base..base + n_s];
            for b in 0..n_a {
                let w = if b == a { 1.0 - cfg.p_slip + slip } else { slip };
                row[shift(cfg, s, b)] += w;
            }
            r[s * n_a + a] = row[goal];
            c[s * n_a + a] = (0..n_s).filter(|&x| hazard[x]).map(|x| row[x]).sum();
        }
    }
    let mut rho0 = vec![0.0; n_s];
    rho0[cell_index(cfg, cfg.start)] = 1.0;
    FiniteCmdp {
        n_states: n_s,
        n_actions: n_a,
        gamma: cfg.gamma,
        p,
        r,
        c,
        rho0,
    }
}

impl Environment for TabularHazardGrid {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.start_state();
        self.t = 0;
        self.done = false;
        vec![self.state as f64]
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.spec.action_space.check(action)?;
        let mut a = action[0] as usize;
        if self.rng.random::<f64>() < self.cfg.p_slip {
            a = self.rng.random_range(0..ACTION_DELTAS.len());
        }
        let next = shift(&self.cfg, self.state, a);
        self.state = next;
        self.t += 1;
        let at_goal = next == self.goal_state();
        let reward = if at_goal { 1.0 } else { 0.0 };
        let cost = if self.is_hazard(next) { 1.0 } else { 0.0 };
        let truncated = !at_goal && self.t >= self.cfg.horizon;
        self.done = at_goal || truncated;
        Ok(Step {
            next_state: vec![next as f64],
            reward,
            cost,
            terminal: self.done,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_rows_are_distributions() {
        for &p_slip in &[0.0, 0.1, 0.37, 0.9] {
            let g = TabularHazardGrid::new(GridConfig {
                p_slip,
                ..GridConfig::default()
            })
            .unwrap();
            let m = g.model();
            for s in 0..m.n_states {
                for a in 0..m.n_actions {
                    let sum: f64 = m.row(s, a).iter().sum();
                    assert!((sum - 1.0).abs() <= 4.0 * f64::EPSILON, "row ({s},{a}) sums to {sum}");
                }
            }
            m.validate().unwrap();
        }
    }

    #[test]
    fn reset_is_start_cell() {
        let mut g = TabularHazardGrid::new(GridConfig::default()).unwrap();
        for seed in [0, 1, 99] {
            assert_eq!(g.reset(seed), vec![10.0]);
        }
    }

    #[test]
    fn hazard_entry_costs_one() {
        let mut g = TabularHazardGrid::new(GridConfig {
            p_slip: 0.0,
            ..GridConfig::default()
        })
        .unwrap();
        g.reset(0);
        let s1 = g.step(&[1.0]).unwrap();
        assert_eq!((s1.reward, s1.cost), (0.0, 0.0));
        let s2 = g.step(&[1.0]).unwrap();
        assert_eq!(s2.next_state, vec![12.0]);
        assert_eq!((s2.reward, s2.cost), (0.0, 1.0));
        g.step(&[1.0]).unwrap();
        let s4 = g.step(&[1.0]).unwrap();
        assert_eq!((s4.reward, s4.terminal, s4.truncated), (1.0, true, false));
        assert!(matches!(g.step(&[0.0]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn time_limit_truncates() {
        let mut g = TabularHazardGrid::new(GridConfig {
            horizon: 3,
            p_slip: 0.0,
            ..GridConfig::default()
        })
        .unwrap();
        g.reset(0);
        g.step(&[3.0]).unwrap();
        g.step(&[3.0]).unwrap();
        let last = g.step(&[3.0]).unwrap();
        assert!(last.terminal && last.truncated);
    }

    #[test]
    fn deterministic_given_seed_and_actions() {
        let mut g = TabularHazardGrid::new(GridConfig {
            p_slip: 0.5,
            ..GridConfig::default()
        })
        .unwrap();
        let run = |g: &mut TabularHazardGrid| {
            g.reset(42);
            let mut out = Vec::new();
            for i in 0..30 {
                match g.step(&[(i % 4) as f64]) {
                    Ok(s) => out.push(s.next_state[0]),
                    Err(_) => break,
                }
            }
            out
        };
        assert_eq!(run(&mut g), run(&mut g));
    }

    #[test]
    fn model_matches_rewards_and_costs() {
        let g = TabularHazardGrid::new(GridConfig {
            p_slip: 0.0,
            ..GridConfig::default()
        })
        .unwrap();
        let m = g.model();
        // moving right from (1,2) enters the hazard at (2,2)
        assert_eq!(m.c[m.sa(11, 1)], 1.0);
        // moving right from (3,2) enters the goal
        assert_eq!(m.r[m.sa(13, 1)], 1.0);
        let goal = g.goal_state();
        assert_eq!(m.row(goal, 0)[goal], 1.0);
        assert_eq!(m.r[m.sa(goal, 1)], 0.0);
    }
}
