//! Feedforward certificate template `V_θ`: sigmoid hidden layers, linear
//! scalar output, exact reverse-mode parameter gradients.
//!
//! Parameter layout (frozen): for every layer in order, hidden layers first
//! and the output layer last, the weight matrix row-major
//! (`fan_out x fan_in`) followed by the `fan_out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        assert!(input_dim > 0, "input dimension must be positive");
        assert!(hidden.iter().all(|&w| w > 0), "hidden widths must be positive");
        NetworkSpec { input_dim, hidden }
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(1);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CertificateNet {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    n_params: usize,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl CertificateNet {
    pub fn new(spec: NetworkSpec) -> Self {
        let mut off = 0;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let l = Layer {
                    fan_in,
                    fan_out,
                    w: off,
                    b: off + fan_in * fan_out,
                };
                off += fan_in * fan_out + fan_out;
                l
            })
            .collect();
        CertificateNet { spec, layers, n_params: off }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.spec.input_dim]];
        acts.extend(self.spec.hidden.iter().map(|&w| vec![0.0; w]));
        let widest = self.spec.hidden.iter().copied().max().unwrap_or(0).max(1);
        Workspace {
            acts,
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
        }
    }

    /// Scaled-uniform initialization: weights in `±1/sqrt(fan_in)`, biases zero.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.n_params];
        for l in &self.layers {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for w in &mut theta[l.w..l.b] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        theta
    }

    /// Forward pass, leaving hidden activations in `ws`.
    fn forward(&self, theta: &[f64], x: &[f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(theta.len(), self.n_params);
        debug_assert_eq!(x.len(), self.spec.input_dim);
        ws.acts[0].copy_from_slice(x);
        let (out_layer, hidden) = self.layers.split_last().expect("at least the output layer");
        for (li, l) in hidden.iter().enumerate() {
            let (prev, next) = ws.acts.split_at_mut(li + 1);
            let input = &prev[li];
            let output = &mut next[0];
            for j in 0..l.fan_out {
                let row = &theta[l.w + j * l.fan_in..l.w + (j + 1) * l.fan_in];
                let z: f64 = theta[l.b + j] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                output[j] = sigmoid(z);
            }
        }
        let last = &ws.acts[hidden.len()];
        let row = &theta[out_layer.w..out_layer.b];
        theta[out_layer.b] + row.iter().zip(last).map(|(w, a)| w * a).sum::<f64>()
    }

    pub fn eval_with(&self, theta: &[f64], x: &[f64], ws: &mut Workspace) -> f64 {
        self.forward(theta, x, ws)
    }

    pub fn eval(&self, theta: &[f64], x: &[f64]) -> f64 {
        self.forward(theta, x, &mut self.workspace())
    }

    /// Adds `scale * dV/dθ (x)` into `grad`; returns `V(x)`.
    pub fn accumulate_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        scale: f64,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let value = self.forward(theta, x, ws);
        let n_hidden = self.layers.len() - 1;
        let out = self.layers[n_hidden];
        {
            let last = &ws.acts[n_hidden];
            for (g, a) in grad[out.w..out.b].iter_mut().zip(last) {
                *g += scale * a;
            }
            grad[out.b] += scale;
        }
        if n_hidden == 0 {
            return value;
        }
        // delta holds dV/dz for the layer currently being processed.
        {
            let l = self.layers[n_hidden - 1];
            let a = &ws.acts[n_hidden];
            for j in 0..l.fan_out {
                ws.delta[j] = scale * theta[out.w + j] * a[j] * (1.0 - a[j]);
            }
        }
        for li in (0..n_hidden).rev() {
            let l = self.layers[li];
            let input = &ws.acts[li];
            for j in 0..l.fan_out {
                let d = ws.delta[j];
                grad[l.b + j] += d;
                let row = &mut grad[l.w + j * l.fan_in..l.w + (j + 1) * l.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if li > 0 {
                for i in 0..l.fan_in {
                    let mut s = 0.0;
                    for j in 0..l.fan_out {
                        s += theta[l.w + j * l.fan_in + i] * ws.delta[j];
                    }
                    let a = input[i];
                    ws.delta_next[i] = s * a * (1.0 - a);
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_next);
            }
        }
        value
    }

    /// `dV/dθ` at `x`, in parameter layout.
    pub fn grad_params(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params];
        self.accumulate_grad(theta, x, 1.0, &mut g, &mut self.workspace());
        g
    }
}

/// Serialized certificate: architecture plus flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedCertificate {
    pub network: NetworkSpec,
    pub theta: Vec<f64>,
}
