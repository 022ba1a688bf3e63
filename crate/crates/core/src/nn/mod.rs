//! Dense CNN core with hand-written reverse-mode gradients.
//!
//! Activations are `f64` NCHW tensors. Every kernel splits work by sample
//! and reduces per-chunk partial results in chunk order, so outputs and
//! gradients do not depend on the number of threads.

mod checkpoint;
mod compdc;
mod conv;
mod layers;
mod network;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use compdc::{compdc_forward, device_aware_conv};
pub use conv::{conv2d_backward, conv2d_forward, BlockMode, ConvOutput};
pub use layers::{linear_backward, linear_forward, maxpool2_backward, maxpool2_forward, relu};
pub use network::{BackwardResult, ConvRoute, Network, ParentArchitecture};

use serde::{Deserialize, Serialize};

use crate::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Panics if `data.len()` differs from the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => invalid(format!("expected a 4-d tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Pull a gradient with respect to softmax outputs back to its logits:
/// dx_k = p_k·(g_k − Σ_j p_j g_j).
pub fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pk, gk)| pk * (gk - dot)).collect()
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, classes) = match logits.shape[..] {
        [n, c] => (n, c),
        _ => return invalid(format!("logits must be [N, classes], got {:?}", logits.shape)),
    };
    if labels.len() != n {
        return invalid(format!("{} labels for a batch of {n}", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return invalid(format!("label {l} out of range for {classes} classes"));
    }
    let mut grad = vec![0.0; n * classes];
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data[i * classes..(i + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[label];
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = (row[k] - lse).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, Tensor::new(vec![n, classes], grad)))
}

/// Fraction of rows whose arg-max equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = logits.shape[1];
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(&logits.data[i * classes..(i + 1) * classes]) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Index of the first maximum.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Clamp to [−range, range] and snap to 2^bits uniform levels, rounding half up.
pub fn quantize_partial_sums(y: &Tensor, adc_bits: u32, range: f64) -> Result<Tensor> {
    if adc_bits == 0 || adc_bits > 30 {
        return invalid(format!("adc_bits must be in 1..=30, got {adc_bits}"));
    }
    if !(range > 0.0 && range.is_finite()) {
        return invalid(format!("ADC range must be positive and finite, got {range}"));
    }
    let mut out = y.clone();
    out.grad = None;
    quantize_in_place(&mut out.data, adc_bits, range);
    Ok(out)
}

pub(crate) fn quantize_in_place(y: &mut [f64], bits: u32, range: f64) {
    let top = f64::from((1u32 << bits) - 1);
    let step = 2.0 * range / top;
    for v in y.iter_mut() {
        let x = v.clamp(-range, range);
        let k = ((x + range) / step + 0.5).floor();
        *v = if k >= top { range } else { -range + k * step };
    }
}

/// Per-layer device affinities α; probabilities are softmax(α) per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityState {
    pub alphas: Vec<Vec<f64>>,
}

impl AffinityState {
    /// All-zero affinities (uniform probabilities).
    pub fn uniform(layers: usize, devices: usize) -> Self {
        AffinityState {
            alphas: vec![vec![0.0; devices]; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.alphas.len()
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.alphas.iter().map(|a| softmax(a)).collect()
    }
}

/// Adaptive-moment optimizer over one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
