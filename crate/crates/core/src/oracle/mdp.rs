use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense finite CMDP: `p[(s * A + a) * S + s']`, expected one-step reward
/// and cost per `(s, a)`, and an initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub rho0: Vec<f64>,
}

impl FiniteCmdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(invalid("finite CMDP needs at least one state and action"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma must lie in [0, 1)"));
        }
        if self.p.len() != s * a * s || self.r.len() != s * a || self.c.len() != s * a {
            return Err(invalid("finite CMDP arrays have inconsistent sizes"));
        }
        if self.rho0.len() != s {
            return Err(invalid("initial distribution has wrong length"));
        }
        for row in self.p.chunks(s) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(invalid("transition row is not a distribution"));
            }
        }
        if self.c.iter().any(|&x| x < 0.0) {
            return Err(invalid("costs must be nonnegative"));
        }
        let sum: f64 = self.rho0.iter().sum();
        if self.rho0.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(invalid("initial distribution does not sum to 1"));
        }
        Ok(())
    }

    #[inline]
    pub fn sa(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Transition row `P(. | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.sa(s, a) * self.n_states;
        &self.p[i..i + self.n_states]
    }

    /// Single-state CMDP whose episode never leaves the state.
    pub fn bandit(gamma: f64, r: Vec<f64>, c: Vec<f64>) -> Self {
        let n_actions = r.len();
        Self {
            n_states: 1,
            n_actions,
            gamma,
            p: vec![1.0; n_actions],
            r,
            c,
            rho0: vec![1.0],
        }
    }
}
