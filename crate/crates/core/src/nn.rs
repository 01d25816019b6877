//! Small dense networks with hand-written backward passes, the Adam
//! optimizer and the two losses used for training. Everything is `f64`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

/// Affine layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        Self {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || dist.sample(rng)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Gradients of the parameters and of the input, given the input seen in
    /// the forward pass and the gradient of the output.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (DenseGrad, Array2<f64>) {
        let grad = DenseGrad {
            weight: x.t().dot(dy),
            bias: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.weight.t()))
    }
}

/// Dense layers with a rectifier between consecutive layers (none after
/// the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn glorot(widths: &[usize], rng: &mut impl Rng) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Dense::glorot(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h);
            if i + 1 < self.layers.len() {
                y.mapv_inplace(relu);
            }
            inputs.push(h);
            h = y;
        }
        (h, MlpCache { inputs })
    }

    pub fn backward(&self, cache: &MlpCache, dout: &Array2<f64>) -> (Vec<DenseGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dy = dout.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, mut dx) = layer.backward(&cache.inputs[i], &dy);
            grads.push(g);
            if i > 0 {
                // cache.inputs[i] is relu(pre-activation); its sign gates dx
                ndarray::Zip::from(&mut dx)
                    .and(&cache.inputs[i])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            dy = dx;
        }
        grads.reverse();
        (grads, dy)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}

pub fn grad_slices(grads: &[DenseGrad]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| {
            [
                g.weight.as_slice().expect("standard layout"),
                g.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over batch and classes of the binary cross entropy between
/// `sigmoid(logits)` and 0/1 targets, with its gradient w.r.t. the logits.
pub fn bce_with_logits(logits: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(logits.dim(), targets.dim(), "logit/target shape mismatch");
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    ndarray::Zip::from(&mut grad)
        .and(logits)
        .and(targets)
        .for_each(|g, &l, &y| {
            // -[y ln s(l) + (1-y) ln(1-s(l))] = softplus(l) - y l
            loss += softplus(l) - y * l;
            *g = (sigmoid(l) - y) / n;
        });
    (loss / n, grad)
}

/// Mean softmax cross entropy of integer labels, with its gradient.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), labels.len(), "batch size mismatch");
    let b = labels.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((row, mut g), &y) in logits.outer_iter().zip(grad.outer_iter_mut()).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (gj, &x) in g.iter_mut().zip(row.iter()) {
            *gj = (x - log_z).exp() / b;
        }
        g[y] -= 1.0 / b;
    }
    (loss / b, grad)
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[&[f64]]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }
}

/// One bias-corrected Adam update over a list of parameter tensors.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    config: &AdamConfig,
) {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter/gradient count mismatch"
    );
    assert_eq!(params.len(), state.m.len(), "optimizer state mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (b1, b2, wd) = (config.beta1, config.beta2, config.weight_decay);
    let step = config.lr / bc1;
    let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.len(), g.len(), "tensor {k}: shape mismatch");
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((pi, &gi), mi), vi) in p
            .iter_mut()
            .zip(g.iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gi = gi + wd * *pi;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *pi -= step * *mi / (vi.sqrt() * inv_sqrt_bc2 + config.eps);
        }
    }
}
