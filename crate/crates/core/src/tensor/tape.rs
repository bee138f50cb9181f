//! Reverse-mode autodiff over a per-forward-pass tape.
//!
//! A [`Tape`] records the fixed set of ops the architectures in this crate
//! need. Parameters live in a [`ParamBank`]; a forward pass mounts them as
//! shared leaves, and [`Tape::accumulate_into`] adds the leaf gradients back
//! into the bank after `backward`. One tape per sample keeps batching
//! embarrassingly parallel while gradient accumulation stays in index order
//! (deterministic sums).

use std::sync::Arc;

use super::nn::ParamBank;
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Value {
    Owned(Tensor),
    Shared(Arc<Tensor>),
}

impl Value {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Shared(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MinPair(NodeId, NodeId),
    /// y = mul * x + add, elementwise with scalar coefficients.
    Affine { x: NodeId, mul: f32 },
    Matvec { w: NodeId, x: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Clamp { x: NodeId, lo: f32, hi: f32 },
    Concat(Vec<NodeId>),
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, mean: f32, inv_std: f32 },
    Dropout { x: NodeId, mask: Arc<Vec<f32>> },
    SoftmaxXent { logits: NodeId, target: usize, probs: Vec<f32> },
    SoftmaxXentSoft { logits: NodeId, targets: Arc<Vec<f32>>, temp: f32, probs: Vec<f32> },
    LogProb { logits: NodeId, index: usize, probs: Vec<f32> },
    Entropy { logits: NodeId, probs: Vec<f32> },
    MseTo { x: NodeId, target: Arc<Vec<f32>> },
    Sum(NodeId),
    Mean(NodeId),
}

struct Node {
    value: Value,
    grad: Vec<f32>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Value, op: Op) -> NodeId {
        let n = value.get().len();
        self.nodes.push(Node { value, grad: vec![0.0; n], op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.get()
    }

    pub fn grad(&self, id: NodeId) -> &[f32] {
        &self.nodes[id.0].grad
    }

    pub fn scalar_value(&self, id: NodeId) -> f32 {
        self.value(id).data[0]
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Value::Owned(t), Op::Leaf { param: None })
    }

    /// Mounts parameter `idx` of the bank as a shared leaf.
    pub fn param(&mut self, bank: &ParamBank, idx: usize) -> NodeId {
        self.push(
            Value::Shared(bank.value_arc(idx)),
            Op::Leaf { param: Some(idx) },
        )
    }

    // ---- elementwise --------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(Value::Owned(t), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(Value::Owned(t), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(Value::Owned(t), Op::Mul(a, b))
    }

    pub fn min_pair(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = zip(self.value(a), self.value(b), f32::min);
        self.push(Value::Owned(t), Op::MinPair(a, b))
    }

    pub fn affine(&mut self, x: NodeId, mul: f32, add: f32) -> NodeId {
        let t = map(self.value(x), |v| mul * v + add);
        self.push(Value::Owned(t), Op::Affine { x, mul })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = map(self.value(x), |v| v.max(0.0));
        self.push(Value::Owned(t), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = map(self.value(x), f32::tanh);
        self.push(Value::Owned(t), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = map(self.value(x), |v| 1.0 / (1.0 + (-v).exp()));
        self.push(Value::Owned(t), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let t = map(self.value(x), f32::exp);
        self.push(Value::Owned(t), Op::Exp(x))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f32, hi: f32) -> NodeId {
        let t = map(self.value(x), |v| v.clamp(lo, hi));
        self.push(Value::Owned(t), Op::Clamp { x, lo, hi })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let n = data.len();
        self.push(
            Value::Owned(Tensor::from_vec(&[n], data)),
            Op::Concat(parts.to_vec()),
        )
    }

    // ---- linear algebra ----------------------------------------------

    /// w: [m, n], x: [n] -> [m].
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let wt = self.value(w);
        let xt = self.value(x);
        let (m, n) = (wt.shape[0], wt.shape[1]);
        debug_assert_eq!(xt.len(), n, "matvec shape mismatch");
        let mut out = vec![0.0f32; m];
        for i in 0..m {
            let row = &wt.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * xt.data[j];
            }
            out[i] = acc;
        }
        self.push(
            Value::Owned(Tensor::from_vec(&[m], out)),
            Op::Matvec { w, x },
        )
    }

    /// x: [C,H,W], w: [OC,C,KH,KW], b: [OC]; valid padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> NodeId {
        let xt = self.value(x);
        let wt = self.value(w);
        let bt = self.value(b);
        let (c, h, wd) = (xt.shape[0], xt.shape[1], xt.shape[2]);
        let (oc, kc, kh, kw) = (wt.shape[0], wt.shape[1], wt.shape[2], wt.shape[3]);
        debug_assert_eq!(c, kc, "conv2d channel mismatch");
        let oh = (h - kh) / stride + 1;
        let ow = (wd - kw) / stride + 1;
        let mut out = vec![0.0f32; oc * oh * ow];
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bt.data[o];
                    let iy0 = oy * stride;
                    let ix0 = ox * stride;
                    for ic in 0..c {
                        for ky in 0..kh {
                            let xrow = (ic * h + iy0 + ky) * wd + ix0;
                            let wrow = ((o * c + ic) * kh + ky) * kw;
                            for kx in 0..kw {
                                acc += xt.data[xrow + kx] * wt.data[wrow + kx];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        self.push(
            Value::Owned(Tensor::from_vec(&[oc, oh, ow], out)),
            Op::Conv2d { x, w, b, stride },
        )
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        const EPS: f32 = 1e-5;
        let xt = self.value(x);
        let n = xt.len() as f32;
        let mean = xt.data.iter().sum::<f32>() / n;
        let var = xt.data.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n;
        let inv_std = 1.0 / (var + EPS).sqrt();
        let g = self.value(gain).data.clone();
        let b = self.value(bias).data.clone();
        let out: Vec<f32> = self.value(x)
            .data
            .iter()
            .zip(g.iter().zip(b.iter()))
            .map(|(v, (gi, bi))| gi * (v - mean) * inv_std + bi)
            .collect();
        let shape = self.value(x).shape.clone();
        self.push(
            Value::Owned(Tensor::from_vec(&shape, out)),
            Op::LayerNorm { x, gain, bias, mean, inv_std },
        )
    }

    /// Mask entries already carry the inverted-dropout 1/(1-p) scale.
    pub fn dropout(&mut self, x: NodeId, mask: Arc<Vec<f32>>) -> NodeId {
        debug_assert_eq!(self.value(x).len(), mask.len());
        let shape = self.value(x).shape.clone();
        let out: Vec<f32> = self.value(x)
            .data
            .iter()
            .zip(mask.iter())
            .map(|(v, m)| v * m)
            .collect();
        self.push(
            Value::Owned(Tensor::from_vec(&shape, out)),
            Op::Dropout { x, mask },
        )
    }

    // ---- losses / reductions -----------------------------------------

    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> NodeId {
        let probs = softmax(&self.value(logits).data);
        let loss = -(probs[target].max(1e-30)).ln();
        self.push(
            Value::Owned(Tensor::scalar(loss)),
            Op::SoftmaxXent { logits, target, probs },
        )
    }

    /// Cross-entropy of a constant soft target against softmax(logits/temp).
    pub fn softmax_xent_soft(&mut self, logits: NodeId, targets: Arc<Vec<f32>>, temp: f32) -> NodeId {
        let scaled: Vec<f32> = self.value(logits).data.iter().map(|v| v / temp).collect();
        let probs = softmax(&scaled);
        let loss = -targets
            .iter()
            .zip(probs.iter())
            .map(|(q, p)| q * p.max(1e-30).ln())
            .sum::<f32>();
        self.push(
            Value::Owned(Tensor::scalar(loss)),
            Op::SoftmaxXentSoft { logits, targets, temp, probs },
        )
    }

    pub fn log_prob(&mut self, logits: NodeId, index: usize) -> NodeId {
        let probs = softmax(&self.value(logits).data);
        let v = probs[index].max(1e-30).ln();
        self.push(
            Value::Owned(Tensor::scalar(v)),
            Op::LogProb { logits, index, probs },
        )
    }

    pub fn entropy(&mut self, logits: NodeId) -> NodeId {
        let probs = softmax(&self.value(logits).data);
        let h = -probs.iter().map(|p| p * p.max(1e-30).ln()).sum::<f32>();
        self.push(
            Value::Owned(Tensor::scalar(h)),
            Op::Entropy { logits, probs },
        )
    }

    pub fn mse_to(&mut self, x: NodeId, target: Arc<Vec<f32>>) -> NodeId {
        debug_assert_eq!(self.value(x).len(), target.len());
        let n = target.len() as f32;
        let v = self.value(x)
            .data
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f32>()
            / n;
        self.push(Value::Owned(Tensor::scalar(v)), Op::MseTo { x, target })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).data.iter().sum();
        self.push(Value::Owned(Tensor::scalar(v)), Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let v = t.data.iter().sum::<f32>() / t.len() as f32;
        self.push(Value::Owned(Tensor::scalar(v)), Op::Mean(x))
    }

    // ---- backward -----------------------------------------------------

    pub fn backward(&mut self, loss: NodeId) {
        debug_assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let gout = std::mem::take(&mut self.nodes[i].grad);
            if gout.iter().all(|g| *g == 0.0) {
                self.nodes[i].grad = gout;
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { .. } => {}
                Op::Add(a, b) => {
                    self.axpy(a, 1.0, &gout);
                    self.axpy(b, 1.0, &gout);
                }
                Op::Sub(a, b) => {
                    self.axpy(a, 1.0, &gout);
                    self.axpy(b, -1.0, &gout);
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[b.0].value.get().data.clone();
                    let av = self.nodes[a.0].value.get().data.clone();
                    for (j, g) in gout.iter().enumerate() {
                        self.nodes[a.0].grad[j] += g * bv[j];
                        self.nodes[b.0].grad[j] += g * av[j];
                    }
                }
                Op::MinPair(a, b) => {
                    let av = self.nodes[a.0].value.get().data.clone();
                    let bv = self.nodes[b.0].value.get().data.clone();
                    for (j, g) in gout.iter().enumerate() {
                        if av[j] <= bv[j] {
                            self.nodes[a.0].grad[j] += g;
                        } else {
                            self.nodes[b.0].grad[j] += g;
                        }
                    }
                }
                Op::Affine { x, mul } => self.axpy(x, mul, &gout),
                Op::Matvec { w, x } => {
                    let wt = self.nodes[w.0].value.get().clone();
                    let xv = self.nodes[x.0].value.get().data.clone();
                    let (m, n) = (wt.shape[0], wt.shape[1]);
                    for i2 in 0..m {
                        let g = gout[i2];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            self.nodes[w.0].grad[i2 * n + j] += g * xv[j];
                            self.nodes[x.0].grad[j] += g * wt.data[i2 * n + j];
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].value.get().data.clone();
                    for (j, g) in gout.iter().enumerate() {
                        if xv[j] > 0.0 {
                            self.nodes[x.0].grad[j] += g;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let yv = self.nodes[i].value.get().data.clone();
                    for (j, g) in gout.iter().enumerate() {
                        self.nodes[x.0].grad[j] += g * (1.0 - yv[j] * yv[j]);
                    }
                }
                Op::Sigmoid(x) => {
                    let yv = self.nodes[i].value.get().data.clone();
                    for (j, g) in gout.iter().enumerate() {
                        self.nodes[x.0].grad[j] += g * yv[j] * (1.0 - yv[j]);
                    }
                }
                Op::Exp(x) => {
                    let yv = self.nodes[i].value.get().data.clone();
                    for (j, g) in gout.iter().enumerate() {
                        self.nodes[x.0].grad[j] += g * yv[j];
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.nodes[x.0].value.get().data.clone();
                    for (j, g) in gout.iter().enumerate() {
                        if xv[j] > lo && xv[j] < hi {
                            self.nodes[x.0].grad[j] += g;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.get().len();
                        for j in 0..n {
                            self.nodes[p.0].grad[j] += gout[off + j];
                        }
                        off += n;
                    }
                }
                Op::Conv2d { x, w, b, stride } => {
                    self.conv2d_backward(x, w, b, stride, &gout);
                }
                Op::LayerNorm { x, gain, bias, mean, inv_std } => {
                    let xv = self.nodes[x.0].value.get().data.clone();
                    let gv = self.nodes[gain.0].value.get().data.clone();
                    let n = xv.len();
                    let xhat: Vec<f32> =
                        xv.iter().map(|v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f32> =
                        gout.iter().zip(gv.iter()).map(|(g, gi)| g * gi).collect();
                    let m1 = dxhat.iter().sum::<f32>() / n as f32;
                    let m2 = dxhat
                        .iter()
                        .zip(xhat.iter())
                        .map(|(d, h)| d * h)
                        .sum::<f32>()
                        / n as f32;
                    for j in 0..n {
                        self.nodes[gain.0].grad[j] += gout[j] * xhat[j];
                        self.nodes[bias.0].grad[j] += gout[j];
                        self.nodes[x.0].grad[j] +=
                            inv_std * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                Op::Dropout { x, mask } => {
                    for (j, g) in gout.iter().enumerate() {
                        self.nodes[x.0].grad[j] += g * mask[j];
                    }
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    let g = gout[0];
                    for (j, p) in probs.iter().enumerate() {
                        let one_hot = if j == target { 1.0 } else { 0.0 };
                        self.nodes[logits.0].grad[j] += g * (p - one_hot);
                    }
                }
                Op::SoftmaxXentSoft { logits, targets, temp, probs } => {
                    let g = gout[0];
                    for (j, p) in probs.iter().enumerate() {
                        self.nodes[logits.0].grad[j] += g * (p - targets[j]) / temp;
                    }
                }
                Op::LogProb { logits, index, probs } => {
                    let g = gout[0];
                    for (j, p) in probs.iter().enumerate() {
                        let one_hot = if j == index { 1.0 } else { 0.0 };
                        self.nodes[logits.0].grad[j] += g * (one_hot - p);
                    }
                }
                Op::Entropy { logits, probs } => {
                    let g = gout[0];
                    let h = self.nodes[i].value.get().data[0];
                    for (j, p) in probs.iter().enumerate() {
                        self.nodes[logits.0].grad[j] += g * (-p * (p.max(1e-30).ln() + h));
                    }
                }
                Op::MseTo { x, target } => {
                    let g = gout[0];
                    let n = target.len() as f32;
                    let xv = self.nodes[x.0].value.get().data.clone();
                    for j in 0..target.len() {
                        self.nodes[x.0].grad[j] += g * 2.0 * (xv[j] - target[j]) / n;
                    }
                }
                Op::Sum(x) => {
                    let g = gout[0];
                    for gj in self.nodes[x.0].grad.iter_mut() {
                        *gj += g;
                    }
                }
                Op::Mean(x) => {
                    let n = self.nodes[x.0].value.get().len() as f32;
                    let g = gout[0] / n;
                    for gj in self.nodes[x.0].grad.iter_mut() {
                        *gj += g;
                    }
                }
            }
            self.nodes[i].grad = gout;
        }
    }

    fn axpy(&mut self, target: NodeId, scale: f32, g: &[f32]) {
        for (dst, s) in self.nodes[target.0].grad.iter_mut().zip(g.iter()) {
            *dst += scale * s;
        }
    }

    fn conv2d_backward(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, gout: &[f32]) {
        let xt = self.nodes[x.0].value.get().clone();
        let wt = self.nodes[w.0].value.get().clone();
        let (c, h, wd) = (xt.shape[0], xt.shape[1], xt.shape[2]);
        let (oc, _, kh, kw) = (wt.shape[0], wt.shape[1], wt.shape[2], wt.shape[3]);
        let oh = (h - kh) / stride + 1;
        let ow = (wd - kw) / stride + 1;
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gout[(o * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    self.nodes[b.0].grad[o] += g;
                    let iy0 = oy * stride;
                    let ix0 = ox * stride;
                    for ic in 0..c {
                        for ky in 0..kh {
                            let xrow = (ic * h + iy0 + ky) * wd + ix0;
                            let wrow = ((o * c + ic) * kh + ky) * kw;
                            for kx in 0..kw {
                                self.nodes[w.0].grad[wrow + kx] += g * xt.data[xrow + kx];
                                self.nodes[x.0].grad[xrow + kx] += g * wt.data[wrow + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Branch pattern of every piecewise-linear op (relu sign, clamp
    /// saturation, min side). Finite-difference harnesses compare patterns
    /// between evaluations: a symmetric difference across a changed branch
    /// does not estimate the derivative the tape reports.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    pattern.extend(self.nodes[x.0].value.get().data.iter().map(|v| *v > 0.0));
                }
                Op::Clamp { x, lo, hi } => {
                    for v in &self.nodes[x.0].value.get().data {
                        pattern.push(*v > *lo);
                        pattern.push(*v < *hi);
                    }
                }
                Op::MinPair(a, b) => {
                    let av = &self.nodes[a.0].value.get().data;
                    let bv = &self.nodes[b.0].value.get().data;
                    pattern.extend(av.iter().zip(bv.iter()).map(|(x, y)| x <= y));
                }
                _ => {}
            }
        }
        pattern
    }

    /// Adds the gradients sitting on parameter leaves into the bank.
    pub fn accumulate_into(&self, bank: &mut ParamBank) {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(idx) } = node.op {
                bank.add_grad(idx, &node.grad);
            }
        }
    }
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f32 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::from_vec(&t.shape, t.data.iter().map(|v| f(*v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    debug_assert_eq!(a.shape, b.shape, "elementwise shape mismatch");
    Tensor::from_vec(
        &a.shape,
        a.data.iter().zip(b.data.iter()).map(|(x, y)| f(*x, *y)).collect(),
    )
}
