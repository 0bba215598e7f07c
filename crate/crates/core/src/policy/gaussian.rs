use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Mlp;

pub const VAR_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Diagonal Gaussian `N(mean, diag(var))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::Dimension {
                what: "gaussian variance",
                expected: mean.len(),
                got: var.len(),
            });
        }
        if var.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("variances must be positive and finite"));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density of the unclipped Gaussian.
    pub fn log_prob(&self, a: &[f64]) -> Result<f64> {
        if a.len() != self.dim() {
            return Err(Error::Dimension {
                what: "action",
                expected: self.dim(),
                got: a.len(),
            });
        }
        if self.var.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("nonpositive variance"));
        }
        Ok(self.log_prob_unchecked(a))
    }

    pub(crate) fn log_prob_unchecked(&self, a: &[f64]) -> f64 {
        let mut lp = -0.5 * LN_2PI * self.dim() as f64;
        for ((x, m), v) in a.iter().zip(&self.mean).zip(&self.var) {
            let d = x - m;
            lp -= 0.5 * (d * d / v + v.ln());
        }
        lp
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// Closed-form `KL(self || other)`.
    pub fn kl(&self, other: &DiagGaussian) -> Result<f64> {
        let (cm, cs) = kl_parts(self, other)?;
        Ok(cm + cs)
    }
}

fn kl_parts(old: &DiagGaussian, new: &DiagGaussian) -> Result<(f64, f64)> {
    if old.dim() != new.dim() {
        return Err(Error::Dimension {
            what: "gaussian pair",
            expected: old.dim(),
            got: new.dim(),
        });
    }
    let mut cm = 0.0;
    let mut cs = 0.0;
    for i in 0..old.dim() {
        let d = new.mean[i] - old.mean[i];
        cm += 0.5 * d * d / new.var[i];
        let ratio = old.var[i] / new.var[i];
        // tr(S^-1 S_i) - n + ln det S / det S_i, per coordinate
        cs += 0.5 * (ratio - 1.0 - ratio.ln());
    }
    Ok((cm, cs.max(0.0)))
}

/// Batch-mean decomposed KL `(C_mu, C_sigma)` of `KL(old || new)`: the mean
/// term uses the new covariance, so the two parts add up to the exact KL.
pub fn kl_decomposed(old: &[DiagGaussian], new: &[DiagGaussian]) -> Result<(f64, f64)> {
    if old.is_empty() || old.len() != new.len() {
        return Err(Error::Dimension {
            what: "state batch",
            expected: old.len(),
            got: new.len(),
        });
    }
    let (mut cm, mut cs) = (0.0, 0.0);
    for (o, n) in old.iter().zip(new) {
        let (a, b) = kl_parts(o, n)?;
        cm += a;
        cs += b;
    }
    let b = old.len() as f64;
    Ok((cm / b, cs / b))
}

/// Gaussian policy with separate mean and variance networks and target
/// copies of both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub var_net: Mlp,
    pub mean_target: Mlp,
    pub var_target: Mlp,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl GaussianPolicy {
    /// `hidden` sizes shared by both heads; the mean starts near zero and
    /// the variance near `init_var`.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
        hidden: &[usize],
        init_var: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(invalid("action bounds must be nonempty and equal length"));
        }
        if !(init_var > VAR_FLOOR) {
            return Err(invalid("initial variance must exceed the floor"));
        }
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(low.len());
        let mut mean_net = Mlp::new(&sizes, true, rng)?;
        mean_net.scale_output_layer(0.01);
        let mut var_net = Mlp::new(&sizes, true, rng)?;
        var_net.scale_output_layer(0.01);
        var_net.set_output_bias(softplus_inv(init_var - VAR_FLOOR));
        Ok(Self {
            mean_target: mean_net.clone(),
            var_target: var_net.clone(),
            mean_net,
            var_net,
            low,
            high,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.mean_net.n_params() + self.var_net.n_params()
    }

    /// Online parameters, mean head first.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params().to_vec();
        p.extend_from_slice(self.var_net.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension {
                what: "policy parameters",
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let k = self.mean_net.n_params();
        self.mean_net.params_mut().copy_from_slice(&p[..k]);
        self.var_net.params_mut().copy_from_slice(&p[k..]);
        Ok(())
    }

    pub fn dist(&self, state: &[f64]) -> DiagGaussian {
        head_dist(&self.mean_net, &self.var_net, state)
    }

    pub fn target_dist(&self, state: &[f64]) -> DiagGaussian {
        head_dist(&self.mean_target, &self.var_target, state)
    }

    /// Online distributions at many states, using batched forward passes.
    pub fn dists(&self, states: &[Vec<f64>]) -> Vec<DiagGaussian> {
        head_dists(&self.mean_net, &self.var_net, states)
    }

    pub fn target_dists(&self, states: &[Vec<f64>]) -> Vec<DiagGaussian> {
        head_dists(&self.mean_target, &self.var_target, states)
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.dist(state).log_prob(action)
    }

    fn clip(&self, a: &mut [f64]) {
        for ((x, lo), hi) in a.iter_mut().zip(&self.low).zip(&self.high) {
            *x = x.clamp(*lo, *hi);
        }
    }

    /// `k` i.i.d. draws from the online policy, clipped to the action box.
    pub fn sample_actions<R: Rng + ?Sized>(&self, state: &[f64], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.dist(state);
        self.draw(&d, k, rng)
    }

    pub fn sample_target_actions<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        k: usize,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        let d = self.target_dist(state);
        self.draw(&d, k, rng)
    }

    fn draw<R: Rng + ?Sized>(&self, d: &DiagGaussian, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| {
                let mut a = d.sample(rng);
                self.clip(&mut a);
                a
            })
            .collect()
    }

    /// Clipped mean action.
    pub fn mean_action(&self, state: &[f64]) -> Vec<f64> {
        let mut a = self.mean_net.forward(state);
        self.clip(&mut a);
        a
    }

    /// Adds `d L / d theta` to `grad` (layout of [`Self::params`]) given the
    /// loss sensitivities to the online mean and variance at `state`.
    pub fn accumulate_grad(&self, state: &[f64], dmean: &[f64], dvar: &[f64], grad: &mut [f64]) {
        let k = self.mean_net.n_params();
        let (gm, gv) = grad.split_at_mut(k);
        if dmean.iter().any(|&x| x != 0.0) {
            let tr = self.mean_net.trace(state);
            self.mean_net.backward(&tr, dmean, gm);
        }
        if dvar.iter().any(|&x| x != 0.0) {
            let tr = self.var_net.trace(state);
            let dz: Vec<f64> = tr.output().iter().zip(dvar).map(|(z, d)| d * sigmoid(*z)).collect();
            self.var_net.backward(&tr, &dz, gv);
        }
    }

    /// Gradient of `log pi(a | s)` with respect to the online parameters.
    pub fn log_prob_grad(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let d = self.dist(state);
        if action.len() != d.dim() {
            return Err(Error::Dimension {
                what: "action",
                expected: d.dim(),
                got: action.len(),
            });
        }
        let dmean: Vec<f64> = (0..d.dim()).map(|i| (action[i] - d.mean[i]) / d.var[i]).collect();
        let dvar: Vec<f64> = (0..d.dim())
            .map(|i| {
                let e = action[i] - d.mean[i];
                0.5 * e * e / (d.var[i] * d.var[i]) - 0.5 / d.var[i]
            })
            .collect();
        let mut g = vec![0.0; self.n_params()];
        self.accumulate_grad(state, &dmean, &dvar, &mut g);
        Ok(g)
    }

    /// `theta' <- rho theta' + (1 - rho) theta` for both heads.
    pub fn polyak(&mut self, rho: f64) -> Result<()> {
        self.mean_target.polyak_from(&self.mean_net, rho)?;
        self.var_target.polyak_from(&self.var_net, rho)
    }
}

fn head_dists(mean: &Mlp, var: &Mlp, states: &[Vec<f64>]) -> Vec<DiagGaussian> {
    let xs: Vec<f64> = states.iter().flatten().copied().collect();
    let n = states.len();
    let d = mean.output_dim();
    let mu = mean.forward_batch(&xs, n);
    let z = var.forward_batch(&xs, n);
    mu.chunks(d)
        .zip(z.chunks(d))
        .map(|(m, z)| DiagGaussian {
            mean: m.to_vec(),
            var: z.iter().map(|&z| softplus(z) + VAR_FLOOR).collect(),
        })
        .collect()
}

fn head_dist(mean: &Mlp, var: &Mlp, state: &[f64]) -> DiagGaussian {
    let mu = mean.forward(state);
    let v = var.forward(state).into_iter().map(|z| softplus(z) + VAR_FLOOR).collect();
    DiagGaussian { mean: mu, var: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_prob_closed_forms() {
        let d = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert!((d.log_prob(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-15);
        let d = DiagGaussian::new(vec![0.5, -1.0], vec![1.0, 1.0]).unwrap();
        assert!((d.log_prob(&[0.5, -1.0]).unwrap() + LN_2PI).abs() < 1e-15);
        assert!(d.log_prob(&[0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn kl_decomposition_examples() {
        let a = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
        let b = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(kl_decomposed(&[a.clone()], &[a.clone()]).unwrap(), (0.0, 0.0));
        assert_eq!(kl_decomposed(&[a.clone()], &[b]).unwrap(), (0.5, 0.0));
        let c = DiagGaussian::new(vec![0.0], vec![std::f64::consts::E]).unwrap();
        let (cm, cs) = kl_decomposed(&[a], &[c]).unwrap();
        assert_eq!(cm, 0.0);
        assert!((cs - 0.5 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn near_zero_variance_samples_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = DiagGaussian::new(vec![0.3, -0.2], vec![1e-12, 1e-12]).unwrap();
        for _ in 0..32 {
            let a = d.sample(&mut rng);
            assert!((a[0] - 0.3).abs() < 1e-4 && (a[1] + 0.2).abs() < 1e-4);
        }
    }

    #[test]
    fn sampling_is_seeded_and_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pol = GaussianPolicy::new(3, vec![-1.0; 2], vec![1.0; 2], &[8], 4.0, &mut rng).unwrap();
        let s = [0.1, 0.2, 0.3];
        let a = pol.sample_actions(&s, 32, &mut ChaCha8Rng::seed_from_u64(9));
        let b = pol.sample_actions(&s, 32, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
        assert!(a.iter().flatten().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn initial_variance_is_requested() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pol = GaussianPolicy::new(2, vec![-1.0], vec![1.0], &[16, 16], 0.25, &mut rng).unwrap();
        let v = pol.dist(&[0.0, 0.0]).var[0];
        assert!((v - 0.25).abs() < 0.02, "{v}");
    }
}
