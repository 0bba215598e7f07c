//! Constrained MDP contract shared by environments and learners.
//!
//! States and actions travel as `Vec<f64>`. Finite spaces are encoded as a
//! single-element vector holding the index, so tabular and continuous tasks
//! share one transition record and one replay buffer.

mod replay;

pub use replay::ReplayBuffer;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StateSpace {
    Finite { count: usize },
    Continuous { dim: usize },
}

impl StateSpace {
    /// Length of the vector encoding one state.
    pub fn encoded_len(&self) -> usize {
        match self {
            StateSpace::Finite { .. } => 1,
            StateSpace::Continuous { dim } => *dim,
        }
    }

    pub fn check(&self, state: &[f64]) -> Result<()> {
        check_encoded("state", self.encoded_len(), state)?;
        if let StateSpace::Finite { count } = self {
            check_index("state", state[0], *count)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Finite { count: usize },
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn encoded_len(&self) -> usize {
        match self {
            ActionSpace::Finite { .. } => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    pub fn check(&self, action: &[f64]) -> Result<()> {
        check_encoded("action", self.encoded_len(), action)?;
        if let ActionSpace::Finite { count } = self {
            check_index("action", action[0], *count)?;
        }
        Ok(())
    }

    /// Clips a continuous action into the box; finite actions pass through.
    pub fn clip(&self, action: &mut [f64]) {
        if let ActionSpace::Box { low, high } = self {
            for ((a, lo), hi) in action.iter_mut().zip(low).zip(high) {
                *a = a.clamp(*lo, *hi);
            }
        }
    }
}

fn check_encoded(what: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension {
            what,
            expected,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(format!("{what} contains a non-finite entry")));
    }
    Ok(())
}

fn check_index(what: &'static str, x: f64, count: usize) -> Result<()> {
    if x < 0.0 || x.fract() != 0.0 || x as usize >= count {
        return Err(invalid(format!("{what} index {x} outside 0..{count}")));
    }
    Ok(())
}

/// Static description of a constrained MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmdpSpec {
    pub state_space: StateSpace,
    pub action_space: ActionSpace,
    pub gamma: f64,
    /// Episode length limit `T`.
    pub episode_limit: usize,
    /// Undiscounted per-episode cost budget.
    pub episodic_cost_limit: f64,
}

impl CmdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.episode_limit == 0 {
            return Err(invalid("episode limit must be at least 1"));
        }
        if !(self.episodic_cost_limit >= 0.0) {
            return Err(invalid("episodic cost limit must be nonnegative"));
        }
        match &self.state_space {
            StateSpace::Finite { count: 0 } | StateSpace::Continuous { dim: 0 } => {
                return Err(invalid("state space must be nonempty"))
            }
            _ => {}
        }
        match &self.action_space {
            ActionSpace::Finite { count: 0 } => return Err(invalid("action set must be nonempty")),
            ActionSpace::Box { low, high } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err(invalid("action box bounds must be nonempty and equal length"));
                }
                for (lo, hi) in low.iter().zip(high) {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(invalid(format!("bad action bounds [{lo}, {hi}]")));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Discounted per-state threshold used by the E-step and the baseline.
    pub fn discounted_threshold(&self) -> Result<f64> {
        convert_threshold(self.episodic_cost_limit, self.episode_limit, self.gamma)
    }

    pub fn check_transition(&self, t: &Transition) -> Result<()> {
        self.state_space.check(&t.state)?;
        self.action_space.check(&t.action)?;
        self.state_space.check(&t.next_state)?;
        if !t.reward.is_finite() {
            return Err(invalid("reward must be finite"));
        }
        if !(t.cost >= 0.0 && t.cost.is_finite()) {
            return Err(invalid(format!("cost must be finite and nonnegative, got {}", t.cost)));
        }
        Ok(())
    }
}

/// One environment step. Field order is the checkpoint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    /// True only for genuine termination; time-limit truncation stays false
    /// so critics keep bootstrapping.
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    transitions: Vec<Transition>,
    episodic_reward: f64,
    episodic_cost: f64,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) {
        self.episodic_reward += t.reward;
        self.episodic_cost += t.cost;
        self.transitions.push(t);
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episodic_reward(&self) -> f64 {
        self.episodic_reward
    }

    pub fn episodic_cost(&self) -> f64 {
        self.episodic_cost
    }

    pub fn into_transitions(self) -> Vec<Transition> {
        self.transitions
    }
}

/// Converts an undiscounted episodic cost budget into the per-state
/// discounted threshold `eps_T * (1 - gamma^T) / (T (1 - gamma))`, assuming
/// violations are equally likely at every step.
pub fn convert_threshold(episodic_limit: f64, horizon: usize, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if !(episodic_limit >= 0.0) {
        return Err(invalid("episodic cost limit must be nonnegative"));
    }
    if horizon == 1 {
        return Ok(episodic_limit);
    }
    let t = horizon as f64;
    // (1 - gamma^T) computed as -expm1(T ln gamma) to keep precision near gamma = 1.
    let num = if gamma == 0.0 {
        1.0
    } else {
        -(t * gamma.ln()).exp_m1()
    };
    Ok(episodic_limit * num / (t * (1.0 - gamma)))
}
