//! Fully-connected ReLU network with a linear output layer and manual
//! backpropagation of the mean squared error.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-a..=a)).collect(),
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.biases)) {
            *o = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Post-activation values of every layer for one sample; `values[0]` is the
/// input.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Layer::glorot(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        s.extend(self.layers.last().map(|l| l.outputs));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = Activations::default();
        self.forward_into(x, &mut acts);
        acts.values.pop().unwrap_or_default()
    }

    pub fn forward_into(&self, x: &[f64], acts: &mut Activations) {
        acts.values.resize(self.layers.len() + 1, Vec::new());
        acts.values[0].clear();
        acts.values[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = acts.values.split_at_mut(k + 1);
            let out = &mut rest[0];
            out.resize(layer.outputs, 0.0);
            layer.affine(&done[k], out);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Squared error of one sample, `sum_j (y_j - t_j)^2 / dim`.
    pub fn sample_loss(&self, x: &[f64], target: &[f64]) -> f64 {
        let y = self.forward(x);
        y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
    }

    /// Adds `scale * d(sample_loss)/d(theta)` into `grads` and returns the
    /// sample loss.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        target: &[f64],
        scale: f64,
        acts: &mut Activations,
        grads: &mut Mlp,
    ) -> f64 {
        self.backprop(x, target, scale, acts, grads, 1.0)
    }

    /// `hidden_sign` multiplies the delta passed back through each hidden
    /// layer; anything but 1 is a deliberately wrong rule.
    fn backprop(
        &self,
        x: &[f64],
        target: &[f64],
        scale: f64,
        acts: &mut Activations,
        grads: &mut Mlp,
        hidden_sign: f64,
    ) -> f64 {
        self.forward_into(x, acts);
        let y = acts.output();
        let dim = y.len() as f64;
        let loss = y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / dim;
        let mut delta: Vec<f64> = y.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / dim).collect();

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let input = &acts.values[k];
            for (o, &d) in delta.iter().enumerate() {
                g.biases[o] += scale * d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += scale * d * xi;
                }
            }
            if k == 0 {
                break;
            }
            // ReLU gate: the stored post-activation is zero exactly where the unit is off.
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += hidden_sign * w * d;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        loss
    }

    /// Flattened parameters in layer order, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn zeroed_like(&self) -> Mlp {
        Mlp::zeros(&self.sizes())
    }
}

/// Max relative error between backpropagated and central-difference
/// gradients of the one-sample loss. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`, so parameters with negligible gradient
/// are compared absolutely.
pub fn gradient_check(net: &Mlp, x: &[f64], target: &[f64]) -> f64 {
    check_with_sign(net, x, target, 1.0)
}

fn check_with_sign(net: &Mlp, x: &[f64], target: &[f64], hidden_sign: f64) -> f64 {
    const STEP: f64 = 1e-5;
    let mut grads = net.zeroed_like();
    let mut acts = Activations::default();
    net.backprop(x, target, 1.0, &mut acts, &mut grads, hidden_sign);
    let analytic = grads.params();

    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = *probe.params_mut().nth(i).expect("index within parameter count");
        *probe.params_mut().nth(i).unwrap() = orig + STEP;
        let up = probe.sample_loss(x, target);
        *probe.params_mut().nth(i).unwrap() = orig - STEP;
        let down = probe.sample_loss(x, target);
        *probe.params_mut().nth(i).unwrap() = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
