//! Small dense networks with hand-written backpropagation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Fully connected network with ReLU hidden layers and a linear output.
///
/// Parameters live in one flat vector, layer by layer: the weight matrix in
/// row-major `out x in` order followed by the bias (when enabled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    bias: bool,
    params: Vec<f64>,
}

/// Per-layer activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output layer")
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize], bias: bool) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid("network needs at least input and output sizes, all positive"));
        }
        let n = sizes
            .windows(2)
            .map(|w| w[0] * w[1] + if bias { w[1] } else { 0 })
            .sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            bias,
            params: vec![0.0; n],
        })
    }

    /// Uniform fan-in initialisation, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], bias: bool, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, bias)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = (1.0 / w[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for p in &mut net.params[off..off + w[0] * w[1]] {
                *p = dist.sample(rng);
            }
            off += w[0] * w[1] + if bias { w[1] } else { 0 };
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Scales the last layer's weights, e.g. to start near a zero output.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let k = self.sizes.len() - 1;
        let (fan_in, fan_out) = (self.sizes[k - 1], self.sizes[k]);
        let off = self.layer_offset(k - 1);
        for p in &mut self.params[off..off + fan_in * fan_out] {
            *p *= factor;
        }
    }

    /// Sets the last layer's bias; no-op without biases.
    pub fn set_output_bias(&mut self, value: f64) {
        if !self.bias {
            return;
        }
        let k = self.sizes.len() - 1;
        let (fan_in, fan_out) = (self.sizes[k - 1], self.sizes[k]);
        let off = self.layer_offset(k - 1) + fan_in * fan_out;
        self.params[off..off + fan_out].fill(value);
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).acts.pop().unwrap()
    }

    /// Forward pass over `n` inputs stored row-major in `xs`; returns the
    /// outputs row-major (`n x output_dim`).
    pub fn forward_batch(&self, xs: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(xs.len(), n * self.sizes[0]);
        let mut h = DMatrix::from_row_slice(n, self.sizes[0], xs);
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fin, fout) = (w[0], w[1]);
            let wt = DMatrix::from_column_slice(fin, fout, &self.params[off..off + fin * fout]);
            let mut out = &h * wt;
            off += fin * fout;
            if self.bias {
                for (j, b) in self.params[off..off + fout].iter().enumerate() {
                    out.column_mut(j).add_scalar_mut(*b);
                }
                off += fout;
            }
            if l < last {
                out.apply(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h.transpose().as_slice().to_vec()
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.sizes[0]);
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fin, fout) = (w[0], w[1]);
            let input = acts.last().unwrap();
            let wm = &self.params[off..off + fin * fout];
            let mut out = vec![0.0; fout];
            for (o, row) in out.iter_mut().zip(wm.chunks_exact(fin)) {
                *o = row.iter().zip(input).map(|(a, b)| a * b).sum();
            }
            off += fin * fout;
            if self.bias {
                for (o, b) in out.iter_mut().zip(&self.params[off..off + fout]) {
                    *o += b;
                }
                off += fout;
            }
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        Trace { acts }
    }

    /// Accumulates `d out / d params` contracted with `grad_out` into `grad`
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + if self.bias { w[1] } else { 0 };
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fin, fout) = (self.sizes[l], self.sizes[l + 1]);
            if l < n_layers - 1 {
                for (d, a) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.acts[l];
            let off = offsets[l];
            let wm = &self.params[off..off + fin * fout];
            {
                let gw = &mut grad[off..off + fin * fout];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (g, x) in gw[o * fin..(o + 1) * fin].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            if self.bias {
                let gb = &mut grad[off + fin * fout..off + fin * fout + fout];
                for (g, d) in gb.iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            let mut prev = vec![0.0; fin];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&wm[o * fin..(o + 1) * fin]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }

    /// `self <- rho * self + (1 - rho) * online`.
    pub fn polyak_from(&mut self, online: &Mlp, rho: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(invalid(format!("polyak weight must lie in [0, 1], got {rho}")));
        }
        if self.sizes != online.sizes || self.bias != online.bias {
            return Err(invalid("polyak between networks of different shapes"));
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = rho * *t + (1.0 - rho) * o;
        }
        Ok(())
    }
}

/// First-order parameter update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64, n_params: usize) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let b1t = 1.0 - beta1.powi(*t as i32);
                let b2t = 1.0 - beta2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let mh = m[i] / b1t;
                    let vh = v[i] / b2t;
                    params[i] -= *lr * mh / (vh.sqrt() + *eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count() {
        let net = Mlp::zeros(&[3, 5, 2], true).unwrap();
        assert_eq!(net.n_params(), 3 * 5 + 5 + 5 * 2 + 2);
        let net = Mlp::zeros(&[7, 1], false).unwrap();
        assert_eq!(net.n_params(), 7);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[4, 16, 8, 2], true, &mut rng).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = net.forward_batch(&xs, 5);
        for (x, y) in xs.chunks(4).zip(out.chunks(2)) {
            let single = net.forward(x);
            for (a, b) in single.iter().zip(y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[3, 6, 5, 2], true, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1];
        let gout = [0.4, -1.3];
        let f = |n: &Mlp, x: &[f64]| -> f64 { n.forward(x).iter().zip(&gout).map(|(a, b)| a * b).sum() };
        let tr = net.trace(&x);
        let mut g = vec![0.0; net.n_params()];
        let gx = net.backward(&tr, &gout, &mut g);
        let h = 1e-6;
        for i in 0..net.n_params() {
            let mut a = net.clone();
            a.params_mut()[i] += h;
            let mut b = net.clone();
            b.params_mut()[i] -= h;
            let fd = (f(&a, &x) - f(&b, &x)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (f(&net, &xp) - f(&net, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn polyak_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online = Mlp::new(&[2, 3, 1], true, &mut rng).unwrap();
        let mut target = Mlp::zeros(&[2, 3, 1], true).unwrap();
        target.polyak_from(&online, 1.0).unwrap();
        assert!(target.params().iter().all(|&p| p == 0.0));
        target.polyak_from(&online, 0.0).unwrap();
        assert_eq!(target.params(), online.params());
        assert!(target.polyak_from(&online, 1.5).is_err());
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Optimizer::adam(0.05, 2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3), "{p:?}");
    }
}
