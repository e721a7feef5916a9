//! A small fully connected network with ReLU hidden layers and a linear
//! output, plus the optimisers that train it.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, one row per output unit) followed by the bias vector.

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform initialisation in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(sizes: &[usize], rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.uniform(-bound, bound));
            }
        }
        Mlp { sizes: sizes.to_vec(), params }
    }

    /// Fails if the parameter count does not fit the layer sizes.
    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && sizes.iter().all(|&s| s > 0) && params.len() == param_count(sizes))
            .then(|| Mlp { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::default();
        self.forward_batch(x, 1, &mut ws).to_vec()
    }

    /// Forward pass over `batch` inputs laid out back to back.
    pub fn forward_batch<'w>(&self, xs: &[f64], batch: usize, ws: &'w mut Workspace) -> &'w [f64] {
        assert_eq!(xs.len(), batch * self.inputs(), "input size mismatch");
        let layers = self.sizes.len() - 1;
        ws.acts.resize_with(self.sizes.len(), Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(xs);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            out.resize(batch * n_out, 0.0);
            let relu = l + 1 < layers;
            for s in 0..batch {
                let x = &input[s * n_in..(s + 1) * n_in];
                for o in 0..n_out {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let mut z = b[o];
                    for i in 0..n_in {
                        z += row[i] * x[i];
                    }
                    out[s * n_out + o] = if relu { z.max(0.0) } else { z };
                }
            }
        }
        &ws.acts[layers]
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative with
    /// respect to the last forward pass's outputs is `d_out`.
    pub fn backward(&self, ws: &mut Workspace, batch: usize, d_out: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(d_out.len(), batch * self.outputs());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let Workspace { acts, delta, delta_prev } = ws;
        delta.clear();
        delta.extend_from_slice(d_out);
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = offsets[l];
            let input = &acts[l];
            {
                let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for s in 0..batch {
                    let x = &input[s * n_in..(s + 1) * n_in];
                    for o in 0..n_out {
                        let d = delta[s * n_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for i in 0..n_in {
                            row[i] += d * x[i];
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[offset..offset + n_in * n_out];
            delta_prev.clear();
            delta_prev.resize(batch * n_in, 0.0);
            for s in 0..batch {
                let dp = &mut delta_prev[s * n_in..(s + 1) * n_in];
                for o in 0..n_out {
                    let d = delta[s * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dp[i] += row[i] * d;
                    }
                }
                // ReLU derivative, read off the stored post-activation.
                let a = &input[s * n_in..(s + 1) * n_in];
                for i in 0..n_in {
                    if a[i] <= 0.0 {
                        dp[i] = 0.0;
                    }
                }
            }
            std::mem::swap(delta, delta_prev);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimiserKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug)]
pub enum Optimiser {
    Sgd { lr: f64, momentum: f64, velocity: Vec<f64> },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimiser {
    pub fn new(kind: OptimiserKind, lr: f64, momentum: f64, n: usize) -> Self {
        match kind {
            OptimiserKind::SgdMomentum => Optimiser::Sgd { lr, momentum, velocity: vec![0.0; n] },
            OptimiserKind::Adam => Optimiser::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimiser::Sgd { lr, momentum, velocity } => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                    *v = *momentum * *v + g;
                    *p -= *lr * *v;
                }
            }
            Optimiser::Adam { lr, beta1, beta2, eps, m, v, t } => {
                *t = t.saturating_add(1);
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + *eps);
                }
            }
        }
    }
}
