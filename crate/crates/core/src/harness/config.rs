use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cmdp::convert_threshold;
use crate::envs::{AnyEnv, CircleConfig, GridConfig, PointCircle, TabularHazardGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Cvpo,
    Pd,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Cvpo => "cvpo",
            Algo::Pd => "pd",
        })
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cvpo" => Ok(Algo::Cvpo),
            "pd" => Ok(Algo::Pd),
            other => Err(Error::Config(format!("unknown algo '{other}' (expected cvpo or pd)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Grid,
    Circle,
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvName::Grid => "grid",
            EnvName::Circle => "circle",
        })
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(EnvName::Grid),
            "circle" => Ok(EnvName::Circle),
            other => Err(Error::Config(format!("unknown env '{other}' (expected grid or circle)"))),
        }
    }
}

/// Training configuration. Every field is a key of the flat `key = value`
/// config format under the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvName,
    pub algo: Algo,
    pub seed: u64,
    pub epochs: usize,
    /// Trajectories collected per epoch.
    pub rollouts: usize,
    /// Learning updates per epoch (critic step, E-step, M-step, polyak).
    pub updates: usize,
    pub batch: usize,
    /// Particles per state (continuous actions only; finite action sets use every action).
    pub particles: usize,
    pub mstep_iters: usize,
    pub gamma: f64,
    pub polyak: f64,
    pub critic_lr: f64,
    /// Learning rate of the tabular critics (plain SGD on the batch MSBE).
    pub tabular_critic_lr: f64,
    pub policy_lr: f64,
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
    pub eps2: f64,
    pub eps_mu: f64,
    pub eps_sigma: f64,
    /// Undiscounted episodic cost budget; `None` takes the environment default.
    pub cost_limit: Option<f64>,
    pub horizon: Option<usize>,
    pub hidden: usize,
    /// Next-state actions per transition in the critic target; `None` means `particles / 4`.
    pub n_next: Option<usize>,
    pub buffer: usize,
    pub init_var: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Step size of the tabular primal-dual actor.
    pub pd_lr: f64,
    pub abort_after: usize,
    /// Checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub radius: f64,
    pub x_lim: f64,
    pub dt: f64,
    pub drag: f64,
    pub p_slip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvName::Grid,
            algo: Algo::Cvpo,
            seed: 0,
            epochs: 100,
            rollouts: 2,
            updates: 20,
            batch: 300,
            particles: 32,
            mstep_iters: 6,
            gamma: 0.99,
            polyak: 0.995,
            critic_lr: 1e-3,
            tabular_critic_lr: 1.0,
            policy_lr: 0.002,
            alpha_mu: 1.0,
            alpha_sigma: 100.0,
            eps2: 0.1,
            eps_mu: 0.001,
            eps_sigma: 0.0001,
            cost_limit: None,
            horizon: None,
            hidden: 64,
            n_next: None,
            buffer: 100_000,
            init_var: 0.25,
            kp: 1.0,
            ki: 0.1,
            kd: 0.0,
            pd_lr: 0.05,
            abort_after: 20,
            checkpoint_every: 0,
            radius: 1.0,
            x_lim: 0.7,
            dt: 0.1,
            drag: 0.0,
            p_slip: 0.1,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "default" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl TrainConfig {
    /// Sets one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "env" => self.env = v.parse()?,
            "algo" => self.algo = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "rollouts" => self.rollouts = parse(key, v)?,
            "updates" => self.updates = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "particles" => self.particles = parse(key, v)?,
            "mstep_iters" => self.mstep_iters = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "polyak" => self.polyak = parse(key, v)?,
            "critic_lr" => self.critic_lr = parse(key, v)?,
            "tabular_critic_lr" => self.tabular_critic_lr = parse(key, v)?,
            "policy_lr" => self.policy_lr = parse(key, v)?,
            "alpha_mu" => self.alpha_mu = parse(key, v)?,
            "alpha_sigma" => self.alpha_sigma = parse(key, v)?,
            "eps2" => self.eps2 = parse(key, v)?,
            "eps_mu" => self.eps_mu = parse(key, v)?,
            "eps_sigma" => self.eps_sigma = parse(key, v)?,
            "cost_limit" => self.cost_limit = parse_opt(key, v)?,
            "horizon" => self.horizon = parse_opt(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "n_next" => self.n_next = parse_opt(key, v)?,
            "buffer" => self.buffer = parse(key, v)?,
            "init_var" => self.init_var = parse(key, v)?,
            "kp" => self.kp = parse(key, v)?,
            "ki" => self.ki = parse(key, v)?,
            "kd" => self.kd = parse(key, v)?,
            "pd_lr" => self.pd_lr = parse(key, v)?,
            "abort_after" => self.abort_after = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "radius" => self.radius = parse(key, v)?,
            "x_lim" => self.x_lim = parse(key, v)?,
            "dt" => self.dt = parse(key, v)?,
            "drag" => self.drag = parse(key, v)?,
            "p_slip" => self.p_slip = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// The configuration in the flat text format.
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("config serialises");
        let mut out = String::new();
        for (k, x) in v.as_object().expect("struct") {
            let s = match x {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Null => "default".into(),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {s}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.rollouts == 0 || self.batch == 0 {
            return bad("epochs, rollouts and batch must be positive");
        }
        if self.particles < 2 {
            return bad("particles must be at least 2");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak must lie in [0, 1]");
        }
        if !(self.eps2 > 0.0 && self.eps_mu > 0.0 && self.eps_sigma > 0.0) {
            return bad("KL thresholds must be positive");
        }
        if !(self.critic_lr > 0.0 && self.policy_lr > 0.0 && self.tabular_critic_lr > 0.0 && self.pd_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.alpha_mu >= 0.0 && self.alpha_sigma >= 0.0) {
            return bad("dual step sizes must be nonnegative");
        }
        if self.cost_limit.is_some_and(|c| !(c >= 0.0)) {
            return bad("cost_limit must be nonnegative");
        }
        if self.horizon == Some(0) || self.hidden == 0 || self.buffer < self.batch || self.n_next == Some(0) {
            return bad("horizon, hidden and n_next must be positive and buffer at least batch");
        }
        if !(self.init_var > crate::policy::VAR_FLOOR) {
            return bad("init_var must exceed the variance floor");
        }
        if self.abort_after == 0 {
            return bad("abort_after must be positive");
        }
        Ok(())
    }

    pub fn n_next(&self) -> usize {
        self.n_next.unwrap_or((self.particles / 4).max(1))
    }

    pub fn build_env(&self) -> Result<AnyEnv> {
        Ok(match self.env {
            EnvName::Grid => {
                let d = GridConfig::default();
                AnyEnv::Grid(TabularHazardGrid::new(GridConfig {
                    p_slip: self.p_slip,
                    gamma: self.gamma,
                    horizon: self.horizon.unwrap_or(d.horizon),
                    episodic_cost_limit: self.cost_limit.unwrap_or(d.episodic_cost_limit),
                    ..d
                })?)
            }
            EnvName::Circle => {
                let d = CircleConfig::default();
                AnyEnv::Circle(PointCircle::new(CircleConfig {
                    radius: self.radius,
                    x_lim: self.x_lim,
                    dt: self.dt,
                    drag: self.drag,
                    gamma: self.gamma,
                    horizon: self.horizon.unwrap_or(d.horizon),
                    episodic_cost_limit: self.cost_limit.unwrap_or(d.episodic_cost_limit),
                    ..d
                })?)
            }
        })
    }

    /// Discounted per-state cost threshold of the configured environment.
    pub fn eps1(&self, env: &AnyEnv) -> Result<f64> {
        use crate::envs::Environment;
        let s = env.spec();
        convert_threshold(s.episodic_cost_limit, s.episode_limit, s.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = TrainConfig::default();
        assert_eq!((c.batch, c.particles, c.mstep_iters), (300, 32, 6));
        assert_eq!((c.eps2, c.eps_mu, c.eps_sigma), (0.1, 0.001, 0.0001));
        let mut d = TrainConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn parse_errors() {
        let mut c = TrainConfig::default();
        c.apply_text("# comment\nenv = circle\nseed=7 # trailing\ncost_limit = 2.5\n").unwrap();
        assert_eq!((c.env, c.seed, c.cost_limit), (EnvName::Circle, 7, Some(2.5)));
        assert!(matches!(c.apply_text("nope = 1"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("seed = x"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("seed 3"), Err(Error::Config(_))));
    }
}
