//! Reward and cost critics trained on the mean-squared Bellman error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::Transition;
use crate::error::{invalid, Result};
use crate::nn::{Mlp, Optimizer};

/// How `(s, a)` is turned into a network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Features {
    /// `[s, a]` concatenated.
    Concat { state_dim: usize, action_dim: usize },
    /// One-hot over finite `(s, a)` pairs; with a bias-free linear layer this
    /// is an exact Q table.
    OneHot { n_states: usize, n_actions: usize },
}

impl Features {
    pub fn dim(&self) -> usize {
        match *self {
            Features::Concat { state_dim, action_dim } => state_dim + action_dim,
            Features::OneHot { n_states, n_actions } => n_states * n_actions,
        }
    }

    fn encode(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        match *self {
            Features::Concat { .. } => {
                let mut x = s.to_vec();
                x.extend_from_slice(a);
                x
            }
            Features::OneHot { n_actions, .. } => {
                let mut x = vec![0.0; self.dim()];
                x[s[0] as usize * n_actions + a[0] as usize] = 1.0;
                x
            }
        }
    }
}

/// Next-state action sampler: returns weighted actions whose weights sum to 1.
pub type NextActions<'a> = dyn FnMut(&[f64]) -> Vec<(Vec<f64>, f64)> + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticPair {
    pub features: Features,
    pub gamma: f64,
    pub qr: Mlp,
    pub qc: Mlp,
    pub qr_target: Mlp,
    pub qc_target: Mlp,
    pub opt_r: Optimizer,
    pub opt_c: Optimizer,
}

impl CriticPair {
    /// Neural critics on `[s, a]` trained with Adam.
    pub fn mlp<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: f64,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let features = Features::Concat { state_dim, action_dim };
        let mut sizes = vec![features.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let qr = Mlp::new(&sizes, true, rng)?;
        let qc = Mlp::new(&sizes, true, rng)?;
        Self::assemble(features, gamma, qr, qc, |n| Optimizer::adam(lr, n))
    }

    /// Exact Q tables (zero-initialised) trained with plain SGD.
    pub fn tabular(n_states: usize, n_actions: usize, lr: f64, gamma: f64) -> Result<Self> {
        let features = Features::OneHot { n_states, n_actions };
        let qr = Mlp::zeros(&[features.dim(), 1], false)?;
        let qc = qr.clone();
        Self::assemble(features, gamma, qr, qc, |_| Optimizer::sgd(lr))
    }

    fn assemble(
        features: Features,
        gamma: f64,
        qr: Mlp,
        qc: Mlp,
        opt: impl Fn(usize) -> Optimizer,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid("gamma must lie in [0, 1)"));
        }
        Ok(Self {
            features,
            gamma,
            opt_r: opt(qr.n_params()),
            opt_c: opt(qc.n_params()),
            qr_target: qr.clone(),
            qc_target: qc.clone(),
            qr,
            qc,
        })
    }

    pub fn q_r(&self, s: &[f64], a: &[f64]) -> f64 {
        self.qr.forward(&self.features.encode(s, a))[0]
    }

    /// Cost value, clamped at zero.
    pub fn q_c(&self, s: &[f64], a: &[f64]) -> f64 {
        self.qc.forward(&self.features.encode(s, a))[0].max(0.0)
    }

    pub fn target_q_r(&self, s: &[f64], a: &[f64]) -> f64 {
        self.qr_target.forward(&self.features.encode(s, a))[0]
    }

    pub fn target_q_c(&self, s: &[f64], a: &[f64]) -> f64 {
        self.qc_target.forward(&self.features.encode(s, a))[0].max(0.0)
    }

    fn encode_batch(&self, pairs: &[(&[f64], &[f64])]) -> Vec<f64> {
        let mut xs = Vec::with_capacity(pairs.len() * self.features.dim());
        for (s, a) in pairs {
            xs.extend(self.features.encode(s, a));
        }
        xs
    }

    /// `(Q_r, Q_c)` of the online critics for many pairs at once.
    pub fn q_batch(&self, pairs: &[(&[f64], &[f64])]) -> (Vec<f64>, Vec<f64>) {
        let xs = self.encode_batch(pairs);
        let qc = self.qc.forward_batch(&xs, pairs.len()).into_iter().map(|v| v.max(0.0)).collect();
        (self.qr.forward_batch(&xs, pairs.len()), qc)
    }

    /// `(Q_r, Q_c)` of the target critics for many pairs at once.
    pub fn target_q_batch(&self, pairs: &[(&[f64], &[f64])]) -> (Vec<f64>, Vec<f64>) {
        let xs = self.encode_batch(pairs);
        let qc = self.qc_target.forward_batch(&xs, pairs.len()).into_iter().map(|v| v.max(0.0)).collect();
        (self.qr_target.forward_batch(&xs, pairs.len()), qc)
    }

    /// Values and action-gradients `(Q_r, dQ_r/da, Q_c, dQ_c/da)` of the
    /// online critics; only meaningful for [`Features::Concat`].
    pub fn action_grads(&self, s: &[f64], a: &[f64]) -> (f64, Vec<f64>, f64, Vec<f64>) {
        let x = self.features.encode(s, a);
        let skip = s.len();
        let mut scratch_r = vec![0.0; self.qr.n_params()];
        let tr = self.qr.trace(&x);
        let gr = self.qr.backward(&tr, &[1.0], &mut scratch_r);
        let qr = tr.output()[0];
        let mut scratch_c = vec![0.0; self.qc.n_params()];
        let tc = self.qc.trace(&x);
        let raw_c = tc.output()[0];
        let gc = if raw_c > 0.0 {
            self.qc.backward(&tc, &[1.0], &mut scratch_c)[skip..].to_vec()
        } else {
            vec![0.0; a.len()]
        };
        (qr, gr[skip..].to_vec(), raw_c.max(0.0), gc)
    }

    /// One gradient step on each critic's MSBE with targets
    /// `r + gamma E_{a'} Q'(s', a')` (just `r` for terminal transitions).
    /// Returns the losses before the step.
    pub fn td_update(&mut self, batch: &[Transition], next: &mut NextActions<'_>) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(invalid("critic batch is empty"));
        }
        let n = batch.len() as f64;
        let mut gr = vec![0.0; self.qr.n_params()];
        let mut gc = vec![0.0; self.qc.n_params()];
        let (mut loss_r, mut loss_c) = (0.0, 0.0);
        let nexts: Vec<Vec<(Vec<f64>, f64)>> = batch
            .iter()
            .map(|t| if t.terminal { Vec::new() } else { next(&t.next_state) })
            .collect();
        let pairs: Vec<(&[f64], &[f64])> = batch
            .iter()
            .zip(&nexts)
            .flat_map(|(t, acts)| acts.iter().map(move |(a, _)| (t.next_state.as_slice(), a.as_slice())))
            .collect();
        let (tqr, tqc) = self.target_q_batch(&pairs);
        let mut j = 0;
        for (t, acts) in batch.iter().zip(&nexts) {
            let (mut yr, mut yc) = (t.reward, t.cost);
            if !t.terminal {
                let (mut er, mut ec) = (0.0, 0.0);
                for (_, w) in acts {
                    er += w * tqr[j];
                    ec += w * tqc[j];
                    j += 1;
                }
                yr += self.gamma * er;
                yc += self.gamma * ec;
            }
            let x = self.features.encode(&t.state, &t.action);
            let tr = self.qr.trace(&x);
            let er = tr.output()[0] - yr;
            loss_r += er * er;
            self.qr.backward(&tr, &[2.0 * er / n], &mut gr);
            let tc = self.qc.trace(&x);
            let ec = tc.output()[0] - yc;
            loss_c += ec * ec;
            self.qc.backward(&tc, &[2.0 * ec / n], &mut gc);
        }
        if gr.iter().chain(&gc).any(|g| !g.is_finite()) {
            return Err(crate::error::Error::Numerical("non-finite critic gradient".into()));
        }
        self.opt_r.step(self.qr.params_mut(), &gr);
        self.opt_c.step(self.qc.params_mut(), &gc);
        Ok((loss_r / n, loss_c / n))
    }

    /// `phi' <- rho phi' + (1 - rho) phi` for both critics.
    pub fn polyak(&mut self, rho: f64) -> Result<()> {
        self.qr_target.polyak_from(&self.qr, rho)?;
        self.qc_target.polyak_from(&self.qc, rho)
    }
}
