//! Minimal feed-forward network with hand-written backpropagation.
//!
//! Hidden layers use rectified-linear activations; the output is either raw
//! linear units (critic, logits) or a softmax head (policy). Gradients are
//! always taken with respect to the final pre-activation values, so callers
//! own the output-side Jacobian (policy gradient, squared error, ...).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Shifted logits below this bound are clamped so softmax probabilities stay
/// strictly positive for arbitrary finite inputs.
const SOFTMAX_CLAMP: f64 = -500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Raw affine outputs.
    Linear,
    /// Probability simplex over the output units.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Layer {
    /// Row-major `out x in` weight matrix.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// A fully-connected network: `dims = [input, hidden..., output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    output: OutputKind,
}

/// Per-layer gradients (or any parameter-shaped accumulator).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.w.iter_mut().chain(self.b.iter_mut()) {
            for x in layer.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for layer in self.w.iter().chain(self.b.iter()) {
            for x in layer {
                sq += x * x;
            }
        }
        sq.sqrt()
    }

    /// Rescales in place so the global norm is at most `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(self.b.iter())
            .all(|layer| layer.iter().all(|x| x.is_finite()))
    }
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[i]` the post-activation output of layer
    /// `i - 1` (ReLU on hidden layers, raw on the last).
    acts: Vec<Vec<f64>>,
    /// Final output after the head nonlinearity, if any.
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Raw pre-head outputs (logits for a softmax net).
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

impl Mlp {
    /// Builds a network with weights drawn uniformly from
    /// `±1/sqrt(fan_in)` per layer and zero biases, seeded.
    pub fn new(dims: &[usize], output: OutputKind, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::argument("Mlp needs at least input and output dims"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::argument("Mlp dims must be positive"));
        }
        let mut rng = rng::rng(seed, Stream::NetInit, dims.len() as u64);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer {
                w,
                b: vec![0.0; fan_out],
                rows: fan_out,
                cols: fan_in,
            });
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            layers,
            output,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output
    }

    /// Deterministic affine + activation composition; softmax applied only
    /// on a policy head.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.dims[0] {
            return Err(Error::argument(format!(
                "input dim {} does not match net input {}",
                input.len(),
                self.dims[0]
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let mut buf = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(acts.last().unwrap(), &mut buf);
            if i + 1 < self.layers.len() {
                for v in buf.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(buf.clone());
        }
        let output = match self.output {
            OutputKind::Linear => acts.last().unwrap().clone(),
            OutputKind::Softmax => softmax(acts.last().unwrap()),
        };
        Ok(ForwardCache { acts, output })
    }

    /// Backpropagates `d loss / d logits` (gradient w.r.t. the final
    /// pre-head values) through the cached activations.
    pub fn backprop(&self, cache: &ForwardCache, logit_grad: &[f64]) -> MlpGrads {
        debug_assert_eq!(logit_grad.len(), self.output_dim());
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = logit_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            let gw = &mut grads.w[i];
            let gb = &mut grads.b[i];
            for r in 0..layer.rows {
                let d = delta[r];
                gb[r] += d;
                let row = &mut gw[r * layer.cols..(r + 1) * layer.cols];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.cols];
                for r in 0..layer.rows {
                    let d = delta[r];
                    let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU derivative through the hidden activation.
                for (p, a) in prev.iter_mut().zip(&cache.acts[i]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        grads
    }

    /// Applies `params -= delta` layer-wise; used by the optimizers.
    pub(crate) fn apply_update(&mut self, delta: &MlpGrads) {
        for (layer, (dw, db)) in self.layers.iter_mut().zip(delta.w.iter().zip(&delta.b)) {
            for (w, d) in layer.w.iter_mut().zip(dw) {
                *w -= d;
            }
            for (b, d) in layer.b.iter_mut().zip(db) {
                *b -= d;
            }
        }
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    /// Flattened parameters, layer by layer, weights (row-major) then biases.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        if flat.len() != expected {
            return Err(Error::argument(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let wn = l.w.len();
            l.w.copy_from_slice(&flat[offset..offset + wn]);
            offset += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&flat[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Numerically stable softmax; strictly positive, sums to one.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&x| ((x - max).max(SOFTMAX_CLAMP)).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// `log softmax(logits)[i]`, consistent with [`softmax`].
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits
        .iter()
        .map(|&x| ((x - max).max(SOFTMAX_CLAMP)).exp())
        .sum::<f64>()
        .ln();
    logits
        .iter()
        .map(|&x| (x - max).max(SOFTMAX_CLAMP) - log_sum)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_weight_policy_head_is_uniform() {
        let mut net = Mlp::new(&[3, 5], OutputKind::Softmax, 0).unwrap();
        net.set_params(&vec![0.0; net.param_count()]).unwrap();
        let out = net.forward(&[0.3, -0.2, 0.9]).unwrap();
        for p in &out {
            assert!((p - 0.2).abs() < 1e-15, "expected uniform, got {out:?}");
        }
    }

    #[test]
    fn identity_single_layer_passthrough() {
        let mut net = Mlp::new(&[3, 3], OutputKind::Linear, 0).unwrap();
        let mut params = vec![0.0; net.param_count()];
        // Row-major identity weights.
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        net.set_params(&params).unwrap();
        let input = [0.5, -1.25, 4.0];
        assert_eq!(net.forward(&input).unwrap(), input.to_vec());
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = Mlp::new(&[4, 2], OutputKind::Linear, 0).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]).unwrap_err(),
            Error::Argument(_)
        ));
    }

    /// Second straightforward evaluator used as an oracle for the forward
    /// pass: same arithmetic, independently structured.
    fn reference_forward(params: &[f64], dims: &[usize], kind: OutputKind, x: &[f64]) -> Vec<f64> {
        let mut offset = 0;
        let mut act = x.to_vec();
        for (li, win) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            let w = &params[offset..offset + n_in * n_out];
            offset += n_in * n_out;
            let b = &params[offset..offset + n_out];
            offset += n_out;
            let mut next = vec![0.0; n_out];
            for (r, n) in next.iter_mut().enumerate() {
                *n = b[r];
                for c in 0..n_in {
                    *n += w[r * n_in + c] * act[c];
                }
            }
            if li + 1 < dims.len() - 1 {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            act = next;
        }
        match kind {
            OutputKind::Linear => act,
            OutputKind::Softmax => softmax(&act),
        }
    }

    #[test]
    fn forward_matches_reference_on_random_nets() {
        for seed in 0..10u64 {
            let dims = [6, 8, 5];
            let net = Mlp::new(&dims, OutputKind::Softmax, seed).unwrap();
            let mut r = crate::rng::rng(seed, crate::rng::Stream::NetInit, 99);
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-2.0..2.0)).collect();
            let ours = net.forward(&x).unwrap();
            let theirs = reference_forward(&net.flatten_params(), &dims, OutputKind::Softmax, &x);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_positive_and_normalized(
            logits in proptest::collection::vec(-1e6f64..1e6, 1..12)
        ) {
            let p = softmax(&logits);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn softmax_extreme_spread_stays_positive() {
        let p = softmax(&[1e300, -1e300, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x > 0.0));
    }
}
