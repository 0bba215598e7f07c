//! Non-parametric E-step: particle sets, the convex dual over the
//! temperature `eta` and safety multiplier `lambda`, and the closed-form
//! variational weights.

mod dual;
mod weights;

pub use dual::{dual_derivatives, dual_value, solve_dual, DualOptions, DualSolution, DualStatus};
pub use weights::{
    cost_minimizing_weights, min_feasible_cost, strict_convexity_holds, variational_weights,
    VariationalWeights,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `B` states with `K` candidate actions each and critic values on every
/// pair. Values are row-major `B x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub n_states: usize,
    pub k: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub qr: Vec<f64>,
    pub qc: Vec<f64>,
    /// Probability of each particle under the old policy. `None` means the
    /// particles were sampled from it, which makes the empirical base uniform.
    pub base: Option<Vec<f64>>,
    /// Per-state weights summing to 1; `None` means a uniform batch average.
    pub state_weights: Option<Vec<f64>>,
}

impl ParticleSet {
    /// Particle set without attached states or actions.
    pub fn from_values(n_states: usize, k: usize, qr: Vec<f64>, qc: Vec<f64>) -> Result<Self> {
        let ps = Self {
            n_states,
            k,
            states: Vec::new(),
            actions: Vec::new(),
            qr,
            qc,
            base: None,
            state_weights: None,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, qr: Vec<f64>, qc: Vec<f64>) -> Result<Self> {
        let n_states = states.len();
        if n_states == 0 || actions.len() % n_states != 0 {
            return Err(invalid("actions must hold K particles per state"));
        }
        let k = actions.len() / n_states;
        let ps = Self {
            n_states,
            k,
            states,
            actions,
            qr,
            qc,
            base: None,
            state_weights: None,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn with_base(mut self, base: Vec<f64>) -> Result<Self> {
        self.base = Some(base);
        self.validate()?;
        Ok(self)
    }

    pub fn with_state_weights(mut self, w: Vec<f64>) -> Result<Self> {
        self.state_weights = Some(w);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states * self.k;
        if self.n_states == 0 {
            return Err(invalid("particle set needs at least one state"));
        }
        if self.k < 2 {
            return Err(invalid("particle set needs K >= 2"));
        }
        for (what, v) in [("reward values", &self.qr), ("cost values", &self.qc)] {
            if v.len() != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("{what} must be finite")));
            }
        }
        if let Some(p) = &self.base {
            if p.len() != n {
                return Err(Error::Dimension {
                    what: "base probabilities",
                    expected: n,
                    got: p.len(),
                });
            }
            for row in p.chunks(self.k) {
                let s: f64 = row.iter().sum();
                if row.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return Err(invalid("base probabilities must form distributions per state"));
                }
            }
        }
        if let Some(w) = &self.state_weights {
            if w.len() != self.n_states {
                return Err(Error::Dimension {
                    what: "state weights",
                    expected: self.n_states,
                    got: w.len(),
                });
            }
            if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid("state weights must be a distribution"));
            }
        }
        Ok(())
    }

    pub(crate) fn state_weight(&self, b: usize) -> f64 {
        match &self.state_weights {
            Some(w) => w[b],
            None => 1.0 / self.n_states as f64,
        }
    }

    /// Log base probability of particle `(b, k)`.
    pub(crate) fn log_base(&self, b: usize, k: usize) -> f64 {
        match &self.base {
            Some(p) => p[b * self.k + k].ln(),
            None => -(self.k as f64).ln(),
        }
    }

    pub(crate) fn base_prob(&self, b: usize, k: usize) -> f64 {
        match &self.base {
            Some(p) => p[b * self.k + k],
            None => 1.0 / self.k as f64,
        }
    }

    /// Expected cost under row weights `w`, averaged with the state weights.
    pub fn weighted_cost(&self, w: &VariationalWeights) -> f64 {
        self.weighted(&self.qc, w)
    }

    pub fn weighted_reward(&self, w: &VariationalWeights) -> f64 {
        self.weighted(&self.qr, w)
    }

    fn weighted(&self, v: &[f64], w: &VariationalWeights) -> f64 {
        (0..self.n_states)
            .map(|b| {
                let row = b * self.k..(b + 1) * self.k;
                self.state_weight(b) * w.w[row.clone()].iter().zip(&v[row]).map(|(a, x)| a * x).sum::<f64>()
            })
            .sum()
    }

    /// State-weighted mean `KL(W_b || base_b)`.
    pub fn kl_to_base(&self, w: &VariationalWeights) -> f64 {
        (0..self.n_states)
            .map(|b| {
                let kl: f64 = (0..self.k)
                    .map(|k| {
                        let x = w.w[b * self.k + k];
                        if x > 0.0 {
                            x * (x.ln() - self.log_base(b, k))
                        } else {
                            0.0
                        }
                    })
                    .sum();
                self.state_weight(b) * kl
            })
            .sum()
    }
}
