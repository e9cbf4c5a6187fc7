//! From-scratch feedforward classifiers: rectified-linear MLPs and a small
//! two-layer convolutional variant, trained by mini-batch Adam on the
//! softmax cross-entropy (average negative log-likelihood).
//!
//! Parameters are exposed as flat `f64` vectors, which keeps the optimizer,
//! serialization and finite-difference gradient checks trivial.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Dense layer `y = x W + b`, `W: (fan_in, fan_out)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Symmetric uniform init scaled by fan-in (U(-1/sqrt(in), 1/sqrt(in))),
    /// for weights and biases alike.
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
        let b = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound));
        Dense { w, b }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// 2-D convolution over square single-precision-free grids, valid padding.
#[derive(Debug, Clone)]
pub struct Conv {
    /// `(out_channels, in_channels, k, k)` stored flat.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_side: usize,
}

impl Conv {
    fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        in_side: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..out_channels * fan_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let b = (0..out_channels).map(|_| rng.gen_range(-bound..bound)).collect();
        Conv {
            w,
            b,
            in_channels,
            out_channels,
            kernel,
            stride,
            in_side,
        }
    }

    pub fn out_side(&self) -> usize {
        (self.in_side - self.kernel) / self.stride + 1
    }

    #[inline]
    fn w_at(&self, o: usize, c: usize, ki: usize, kj: usize) -> f64 {
        self.w[((o * self.in_channels + c) * self.kernel + ki) * self.kernel + kj]
    }

    /// `input`: per-sample `(in_channels * in_side^2)`, returns
    /// `(out_channels * out_side^2)`.
    fn forward_sample(&self, input: &[f64], out: &mut [f64]) {
        let os = self.out_side();
        let is = self.in_side;
        for o in 0..self.out_channels {
            for i in 0..os {
                for j in 0..os {
                    let mut acc = self.b[o];
                    for c in 0..self.in_channels {
                        let plane = &input[c * is * is..(c + 1) * is * is];
                        for ki in 0..self.kernel {
                            let row = (i * self.stride + ki) * is + j * self.stride;
                            for kj in 0..self.kernel {
                                acc += self.w_at(o, c, ki, kj) * plane[row + kj];
                            }
                        }
                    }
                    out[(o * os + i) * os + j] = acc;
                }
            }
        }
    }

    fn backward_sample(
        &self,
        input: &[f64],
        d_out: &[f64],
        d_w: &mut [f64],
        d_b: &mut [f64],
        d_in: &mut [f64],
    ) {
        let os = self.out_side();
        let is = self.in_side;
        for o in 0..self.out_channels {
            for i in 0..os {
                for j in 0..os {
                    let g = d_out[(o * os + i) * os + j];
                    if g == 0.0 {
                        continue;
                    }
                    d_b[o] += g;
                    for c in 0..self.in_channels {
                        let base = c * is * is;
                        for ki in 0..self.kernel {
                            let row = base + (i * self.stride + ki) * is + j * self.stride;
                            for kj in 0..self.kernel {
                                let widx =
                                    ((o * self.in_channels + c) * self.kernel + ki) * self.kernel
                                        + kj;
                                d_w[widx] += g * input[row + kj];
                                d_in[row + kj] += g * self.w[widx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Architecture descriptor, also the serialized form.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum Arch {
    /// `sizes = [input, hidden.., output]`, ReLU between, linear head.
    Mlp { sizes: Vec<usize> },
    /// Two conv layers then a linear head. The input vector is interpreted
    /// as `channels` square grids of `side^2` pixels each followed by
    /// `tail` pass-through features appended to the flattened conv output.
    Conv {
        side: usize,
        channels: usize,
        tail: usize,
        conv1: (usize, usize, usize),
        conv2: (usize, usize, usize),
        classes: usize,
    },
}

#[derive(Debug, Clone)]
enum Body {
    Mlp(Vec<Dense>),
    Conv {
        conv1: Conv,
        conv2: Conv,
        head: Dense,
        tail: usize,
    },
}

/// A feedforward classifier producing logits over `classes`.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Arch,
    body: Body,
}

impl Network {
    pub fn new(arch: Arch, rng: &mut Rng) -> Network {
        let body = match &arch {
            Arch::Mlp { sizes } => {
                assert!(sizes.len() >= 2, "MLP needs input and output sizes");
                let layers = sizes
                    .windows(2)
                    .map(|w| Dense::init(w[0], w[1], rng))
                    .collect();
                Body::Mlp(layers)
            }
            Arch::Conv {
                side,
                channels,
                tail,
                conv1,
                conv2,
                classes,
            } => {
                let c1 = Conv::init(*channels, conv1.0, conv1.1, conv1.2, *side, rng);
                let c2 = Conv::init(conv1.0, conv2.0, conv2.1, conv2.2, c1.out_side(), rng);
                let flat = conv2.0 * c2.out_side() * c2.out_side() + tail;
                let head = Dense::init(flat, *classes, rng);
                Body::Conv {
                    conv1: c1,
                    conv2: c2,
                    head,
                    tail: *tail,
                }
            }
        };
        Network { arch, body }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        match &self.arch {
            Arch::Mlp { sizes } => sizes[0],
            Arch::Conv {
                side,
                channels,
                tail,
                ..
            } => channels * side * side + tail,
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.arch {
            Arch::Mlp { sizes } => *sizes.last().unwrap(),
            Arch::Conv { classes, .. } => *classes,
        }
    }

    /// Logits for a batch `(B, input_dim)`.
    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.body {
            Body::Mlp(layers) => {
                let mut h = x.clone();
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.forward(&h);
                    if i + 1 < layers.len() {
                        h.mapv_inplace(|v| v.max(0.0));
                    }
                }
                h
            }
            Body::Conv {
                conv1,
                conv2,
                head,
                tail,
            } => {
                let b = x.nrows();
                let grid_dim = x.ncols() - tail;
                let mid_dim = conv1.out_channels * conv1.out_side() * conv1.out_side();
                let out_dim = conv2.out_channels * conv2.out_side() * conv2.out_side();
                let mut flat = Array2::zeros((b, out_dim + tail));
                let mut mid = vec![0.0; mid_dim];
                let mut out = vec![0.0; out_dim];
                for (i, row) in x.outer_iter().enumerate() {
                    let row = row.as_slice().expect("contiguous input row");
                    conv1.forward_sample(&row[..grid_dim], &mut mid);
                    mid.iter_mut().for_each(|v| *v = v.max(0.0));
                    conv2.forward_sample(&mid, &mut out);
                    for (j, v) in out.iter().enumerate() {
                        flat[(i, j)] = v.max(0.0);
                    }
                    for (j, v) in row[grid_dim..].iter().enumerate() {
                        flat[(i, out_dim + j)] = *v;
                    }
                }
                head.forward(&flat)
            }
        }
    }

    /// Class probabilities for a single input.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        let logits = self.logits(&batch);
        softmax_row(logits.row(0).as_slice().expect("row"))
    }

    /// Average negative log-likelihood of `labels` under the classifier.
    pub fn nll(&self, x: &Array2<f64>, labels: &[usize]) -> f64 {
        let logits = self.logits(x);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let row = row.as_slice().expect("row");
            total += log_sum_exp(row) - row[y];
        }
        total / labels.len() as f64
    }

    /// Average NLL and its gradient with respect to the flat parameters.
    pub fn loss_and_grad(&self, x: &Array2<f64>, labels: &[usize]) -> (f64, Vec<f64>) {
        match &self.body {
            Body::Mlp(layers) => self.mlp_loss_and_grad(layers, x, labels),
            Body::Conv {
                conv1,
                conv2,
                head,
                tail,
            } => self.conv_loss_and_grad(conv1, conv2, head, *tail, x, labels),
        }
    }

    fn mlp_loss_and_grad(
        &self,
        layers: &[Dense],
        x: &Array2<f64>,
        labels: &[usize],
    ) -> (f64, Vec<f64>) {
        // Forward pass caching post-activation inputs of every layer.
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
        let mut h = x.clone();
        for (i, layer) in layers.iter().enumerate() {
            inputs.push(h.clone());
            h = layer.forward(&h);
            if i + 1 < layers.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        let (loss, mut delta) = softmax_ce_backward(&h, labels);
        // Backward pass, accumulating flat grads in layer order.
        let mut grads_per_layer: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate().rev() {
            let input = &inputs[i];
            let d_w = input.t().dot(&delta);
            let d_b = delta.sum_axis(ndarray::Axis(0));
            if i > 0 {
                let mut d_in = delta.dot(&layer.w.t());
                // ReLU derivative through the cached post-activation input.
                d_in.zip_mut_with(input, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = d_in;
            }
            grads_per_layer.push((d_w, d_b));
        }
        grads_per_layer.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (d_w, d_b) in &grads_per_layer {
            flat.extend(d_w.iter());
            flat.extend(d_b.iter());
        }
        (loss, flat)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_loss_and_grad(
        &self,
        conv1: &Conv,
        conv2: &Conv,
        head: &Dense,
        tail: usize,
        x: &Array2<f64>,
        labels: &[usize],
    ) -> (f64, Vec<f64>) {
        let b = x.nrows();
        let grid_dim = x.ncols() - tail;
        let mid_dim = conv1.out_channels * conv1.out_side() * conv1.out_side();
        let out_dim = conv2.out_channels * conv2.out_side() * conv2.out_side();

        // Forward with caches.
        let mut mids = Array2::zeros((b, mid_dim)); // post-ReLU conv1 output
        let mut pre2 = Array2::zeros((b, out_dim)); // pre-ReLU conv2 output
        let mut flat = Array2::zeros((b, out_dim + tail));
        let mut scratch_mid = vec![0.0; mid_dim];
        let mut scratch_out = vec![0.0; out_dim];
        for (i, row) in x.outer_iter().enumerate() {
            let row = row.as_slice().expect("contiguous input row");
            conv1.forward_sample(&row[..grid_dim], &mut scratch_mid);
            scratch_mid.iter_mut().for_each(|v| *v = v.max(0.0));
            conv2.forward_sample(&scratch_mid, &mut scratch_out);
            for j in 0..mid_dim {
                mids[(i, j)] = scratch_mid[j];
            }
            for j in 0..out_dim {
                pre2[(i, j)] = scratch_out[j];
                flat[(i, j)] = scratch_out[j].max(0.0);
            }
            for (j, v) in row[grid_dim..].iter().enumerate() {
                flat[(i, out_dim + j)] = *v;
            }
        }
        let logits = head.forward(&flat);
        let (loss, delta) = softmax_ce_backward(&logits, labels);

        // Head gradients.
        let d_head_w = flat.t().dot(&delta);
        let d_head_b = delta.sum_axis(ndarray::Axis(0));
        let d_flat = delta.dot(&head.w.t());

        // Conv gradients, sample by sample.
        let mut d_w1 = vec![0.0; conv1.w.len()];
        let mut d_b1 = vec![0.0; conv1.b.len()];
        let mut d_w2 = vec![0.0; conv2.w.len()];
        let mut d_b2 = vec![0.0; conv2.b.len()];
        let mut d_mid = vec![0.0; mid_dim];
        let mut d_out = vec![0.0; out_dim];
        let mut d_grid = vec![0.0; grid_dim];
        for i in 0..b {
            for j in 0..out_dim {
                d_out[j] = if pre2[(i, j)] > 0.0 { d_flat[(i, j)] } else { 0.0 };
            }
            d_mid.iter_mut().for_each(|v| *v = 0.0);
            let mid_row = mids.row(i);
            let mid_row = mid_row.as_slice().expect("row");
            conv2.backward_sample(mid_row, &d_out, &mut d_w2, &mut d_b2, &mut d_mid);
            for (g, &v) in d_mid.iter_mut().zip(mid_row.iter()) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
            let row = x.row(i);
            let row = row.as_slice().expect("row");
            d_grid.iter_mut().for_each(|v| *v = 0.0);
            conv1.backward_sample(&row[..grid_dim], &d_mid, &mut d_w1, &mut d_b1, &mut d_grid);
        }

        let mut flat_grads = Vec::with_capacity(self.num_params());
        flat_grads.extend(&d_w1);
        flat_grads.extend(&d_b1);
        flat_grads.extend(&d_w2);
        flat_grads.extend(&d_b2);
        flat_grads.extend(d_head_w.iter());
        flat_grads.extend(d_head_b.iter());
        (loss, flat_grads)
    }

    pub fn num_params(&self) -> usize {
        match &self.body {
            Body::Mlp(layers) => layers.iter().map(|l| l.w.len() + l.b.len()).sum(),
            Body::Conv {
                conv1,
                conv2,
                head,
                ..
            } => {
                conv1.w.len()
                    + conv1.b.len()
                    + conv2.w.len()
                    + conv2.b.len()
                    + head.w.len()
                    + head.b.len()
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        match &self.body {
            Body::Mlp(layers) => {
                for l in layers {
                    out.extend(l.w.iter());
                    out.extend(l.b.iter());
                }
            }
            Body::Conv {
                conv1,
                conv2,
                head,
                ..
            } => {
                out.extend(&conv1.w);
                out.extend(&conv1.b);
                out.extend(&conv2.w);
                out.extend(&conv2.b);
                out.extend(head.w.iter());
                out.extend(head.b.iter());
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter vector length");
        let mut cursor = 0;
        let mut take = |n: usize| {
            let slice = &flat[cursor..cursor + n];
            cursor += n;
            slice
        };
        match &mut self.body {
            Body::Mlp(layers) => {
                for l in layers {
                    let n_w = l.w.len();
                    let shape = l.w.raw_dim();
                    l.w = Array2::from_shape_vec(shape, take(n_w).to_vec()).expect("shape");
                    let n_b = l.b.len();
                    l.b = Array1::from_vec(take(n_b).to_vec());
                }
            }
            Body::Conv {
                conv1,
                conv2,
                head,
                ..
            } => {
                let n = conv1.w.len();
                conv1.w = take(n).to_vec();
                let n = conv1.b.len();
                conv1.b = take(n).to_vec();
                let n = conv2.w.len();
                conv2.w = take(n).to_vec();
                let n = conv2.b.len();
                conv2.b = take(n).to_vec();
                let n_w = head.w.len();
                let shape = head.w.raw_dim();
                head.w = Array2::from_shape_vec(shape, take(n_w).to_vec()).expect("shape");
                let n_b = head.b.len();
                head.b = Array1::from_vec(take(n_b).to_vec());
            }
        }
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Average NLL and its gradient with respect to the logits.
fn softmax_ce_backward(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let b = labels.len();
    let mut delta = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let row = row.as_slice().expect("row");
        loss += log_sum_exp(row) - row[y];
        let probs = softmax_row(row);
        for (a, p) in probs.iter().enumerate() {
            delta[(i, a)] = (p - if a == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, delta)
}

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales the gradient down to `max_norm` when its global L2 norm exceeds it.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Central-difference gradient of the average NLL, one entry per parameter.
pub fn finite_difference_grad(
    net: &Network,
    x: &Array2<f64>,
    labels: &[usize],
    step: f64,
) -> Vec<f64> {
    let mut probe = net.clone();
    let base = net.params();
    let mut grads = Vec::with_capacity(base.len());
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + step;
        probe.set_params(&params);
        let up = probe.nll(x, labels);
        params[i] = base[i] - step;
        probe.set_params(&params);
        let down = probe.nll(x, labels);
        params[i] = base[i];
        grads.push((up - down) / (2.0 * step));
    }
    grads
}

/// Largest per-parameter relative error between analytic and
/// central-difference gradients; denominators are floored at 1e-6 so that
/// parameters with vanishing gradient compare absolutely.
pub fn max_relative_gradient_error(
    net: &Network,
    x: &Array2<f64>,
    labels: &[usize],
    step: f64,
) -> f64 {
    let (_, analytic) = net.loss_and_grad(x, labels);
    let numeric = finite_difference_grad(net, x, labels, step);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
