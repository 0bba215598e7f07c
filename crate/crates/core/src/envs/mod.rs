//! Seedable CMDP environments.

mod circle;
mod grid;

pub use circle::{CircleConfig, PointCircle};
pub use grid::{GridConfig, TabularHazardGrid, ACTION_DELTAS};

use crate::cmdp::CmdpSpec;
use crate::error::{invalid, Result};

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    /// The episode is over (goal reached or time limit hit).
    pub terminal: bool,
    /// The episode ended only because of the time limit.
    pub truncated: bool,
}

pub trait Environment {
    fn spec(&self) -> &CmdpSpec;

    /// Starts a new episode; the initial state and all in-episode randomness
    /// are a pure function of `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<Step>;
}

/// Environment selected by name, as on the command line.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Grid(TabularHazardGrid),
    Circle(PointCircle),
}

impl AnyEnv {
    pub fn name(&self) -> &'static str {
        match self {
            AnyEnv::Grid(_) => "grid",
            AnyEnv::Circle(_) => "circle",
        }
    }
}

impl Environment for AnyEnv {
    fn spec(&self) -> &CmdpSpec {
        match self {
            AnyEnv::Grid(e) => e.spec(),
            AnyEnv::Circle(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            AnyEnv::Grid(e) => e.reset(seed),
            AnyEnv::Circle(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        match self {
            AnyEnv::Grid(e) => e.step(action),
            AnyEnv::Circle(e) => e.step(action),
        }
    }
}

/// Parses the environment name used by the CLI.
pub fn env_kind(name: &str) -> Result<&'static str> {
    match name {
        "grid" => Ok("grid"),
        "circle" => Ok("circle"),
        other => Err(invalid(format!("unknown environment '{other}' (expected grid or circle)"))),
    }
}
