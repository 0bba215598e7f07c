use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{GaussianPolicy, TabularPolicy};

/// Policy driven by the harness: Gaussian for box actions, tabular softmax
/// for finite ones (states and actions encoded as single indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Gaussian(GaussianPolicy),
    Tabular(TabularPolicy),
}

impl Policy {
    /// Sampled action, or the mode when `deterministic`.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Policy::Gaussian(p) => Ok(if deterministic {
                p.mean_action(state)
            } else {
                p.sample_actions(state, 1, rng).pop().expect("one sample")
            }),
            Policy::Tabular(p) => {
                let s = state[0] as usize;
                let a = if deterministic {
                    let pr = p.probs(s)?;
                    // first maximiser, for reproducibility
                    let mut best = 0;
                    for (i, &x) in pr.iter().enumerate() {
                        if x > pr[best] {
                            best = i;
                        }
                    }
                    best
                } else {
                    p.sample_actions(s, 1, rng)?[0]
                };
                Ok(vec![a as f64])
            }
        }
    }
}
