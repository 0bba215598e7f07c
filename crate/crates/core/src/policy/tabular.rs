use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Per-state softmax over a logits table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    /// Policy with the given row-major probabilities; zeros map to `-inf` logits.
    pub fn from_probs(n_actions: usize, probs: &[f64]) -> Result<Self> {
        if n_actions == 0 || probs.is_empty() || probs.len() % n_actions != 0 {
            return Err(invalid("probability table must be S x A"));
        }
        for row in probs.chunks(n_actions) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(invalid("policy rows must be distributions"));
            }
        }
        Ok(Self {
            n_states: probs.len() / n_actions,
            n_actions,
            logits: probs.iter().map(|p| p.ln()).collect(),
        })
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(invalid(format!("state {s} outside 0..{}", self.n_states)));
        }
        Ok(())
    }

    pub fn probs(&self, s: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(e.into_iter().map(|x| x / z).collect())
    }

    /// Full row-major probability table.
    pub fn table(&self) -> Vec<f64> {
        (0..self.n_states).flat_map(|s| self.probs(s).unwrap()).collect()
    }

    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64> {
        if a >= self.n_actions {
            return Err(Error::Dimension {
                what: "action index",
                expected: self.n_actions,
                got: a,
            });
        }
        Ok(self.probs(s)?[a].ln())
    }

    pub fn sample_actions<R: Rng + ?Sized>(&self, s: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        let p = self.probs(s)?;
        Ok((0..k)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, pa) in p.iter().enumerate() {
                    acc += pa;
                    if u < acc {
                        return a;
                    }
                }
                p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
            })
            .collect())
    }
}
