//! Parameter storage and the layer set used by every network in the crate.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::Tensor;
use crate::error::{PpgtaError, Result};

/// Named parameter tensors plus their gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamBank {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: Arc<Tensor>,
    grad: Tensor,
}

impl ParamBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(&value.shape);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Arc::new(value),
            grad,
        });
        let idx = self.entries.len() - 1;
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.entries[idx].value
    }

    pub fn value_arc(&self, idx: usize) -> Arc<Tensor> {
        Arc::clone(&self.entries[idx].value)
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[idx].value)
    }

    pub fn grad(&self, idx: usize) -> &Tensor {
        &self.entries[idx].grad
    }

    pub fn add_grad(&mut self, idx: usize, g: &[f32]) {
        for (dst, s) in self.entries[idx].grad.data.iter_mut().zip(g.iter()) {
            *dst += s;
        }
    }

    pub fn scale_grads(&mut self, s: f32) {
        for e in &mut self.entries {
            for g in e.grad.data.iter_mut() {
                *g *= s;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Copies parameter values from a shape-identical bank (same names).
    pub fn copy_values_from(&mut self, other: &ParamBank) -> Result<()> {
        for i in 0..self.entries.len() {
            let src = other.index_of(&self.entries[i].name).ok_or_else(|| {
                PpgtaError::Contract(format!("missing parameter {}", self.entries[i].name))
            })?;
            let t = other.value(src);
            if t.shape != self.entries[i].value.shape {
                return Err(PpgtaError::Contract(format!(
                    "shape mismatch for parameter {}",
                    self.entries[i].name
                )));
            }
            self.entries[i].value = Arc::new(t.clone());
        }
        Ok(())
    }

    /// Copies values for every parameter whose name exists in `other`,
    /// leaving the rest untouched (used for warm starts with extra heads).
    pub fn copy_overlapping_from(&mut self, other: &ParamBank) {
        for i in 0..self.entries.len() {
            if let Some(src) = other.index_of(&self.entries[i].name) {
                if other.value(src).shape == self.entries[i].value.shape {
                    self.entries[i].value = Arc::new(other.value(src).clone());
                }
            }
        }
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.value.as_ref()))
    }
}

/// teacher <- m * teacher + (1 - m) * student, elementwise.
pub fn ema_update(teacher: &mut ParamBank, student: &ParamBank, momentum: f32) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(PpgtaError::Contract("ema: bank size mismatch".into()));
    }
    for i in 0..teacher.len() {
        let s = student.value_arc(i);
        if s.shape != teacher.value(i).shape {
            return Err(PpgtaError::Contract("ema: parameter shape mismatch".into()));
        }
        let t = teacher.value_mut(i);
        for (tv, sv) in t.data.iter_mut().zip(s.data.iter()) {
            *tv = momentum * *tv + (1.0 - momentum) * sv;
        }
    }
    Ok(())
}

fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let k = 1.0 / (fan_in.max(1) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-k..k)).collect();
    Tensor::from_vec(shape, data)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(
        bank: &mut ParamBank,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = bank.add(&format!("{name}.w"), uniform_init(rng, &[out_dim, in_dim], in_dim));
        let b = bank.add(&format!("{name}.b"), uniform_init(rng, &[out_dim], in_dim));
        Dense { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, bank: &ParamBank, x: NodeId) -> NodeId {
        let w = tape.param(bank, self.w);
        let b = tape.param(bank, self.b);
        let y = tape.matvec(w, x);
        tape.add(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new(
        bank: &mut ParamBank,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let w = bank.add(
            &format!("{name}.w"),
            uniform_init(rng, &[out_ch, in_ch, k, k], fan_in),
        );
        let b = bank.add(&format!("{name}.b"), uniform_init(rng, &[out_ch], fan_in));
        Conv { w, b, stride }
    }

    pub fn forward(&self, tape: &mut Tape, bank: &ParamBank, x: NodeId) -> NodeId {
        let w = tape.param(bank, self.w);
        let b = tape.param(bank, self.b);
        tape.conv2d(x, w, b, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNormParams {
    pub fn new(bank: &mut ParamBank, name: &str, dim: usize) -> Self {
        let gain = bank.add(&format!("{name}.g"), Tensor::from_vec(&[dim], vec![1.0; dim]));
        let bias = bank.add(&format!("{name}.b"), Tensor::zeros(&[dim]));
        LayerNormParams { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bank: &ParamBank, x: NodeId) -> NodeId {
        let g = tape.param(bank, self.gain);
        let b = tape.param(bank, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Standard GRU cell. Convention: h' = (1 - z) * h + z * n, so a z gate
/// saturated at 0 passes the hidden state through unchanged.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    wz: usize,
    uz: usize,
    bz: usize,
    wr: usize,
    ur: usize,
    br: usize,
    wn: usize,
    un: usize,
    bn: usize,
}

impl GruCell {
    pub fn new(
        bank: &mut ParamBank,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_size: usize,
        hidden_size: usize,
    ) -> Self {
        let mk_w = |bank: &mut ParamBank, rng: &mut ChaCha8Rng, n: &str| {
            bank.add(n, uniform_init(rng, &[hidden_size, input_size], input_size))
        };
        let mk_u = |bank: &mut ParamBank, rng: &mut ChaCha8Rng, n: &str| {
            bank.add(n, uniform_init(rng, &[hidden_size, hidden_size], hidden_size))
        };
        let mk_b = |bank: &mut ParamBank, rng: &mut ChaCha8Rng, n: &str| {
            bank.add(n, uniform_init(rng, &[hidden_size], hidden_size))
        };
        GruCell {
            input_size,
            hidden_size,
            wz: mk_w(bank, rng, &format!("{name}.wz")),
            uz: mk_u(bank, rng, &format!("{name}.uz")),
            bz: mk_b(bank, rng, &format!("{name}.bz")),
            wr: mk_w(bank, rng, &format!("{name}.wr")),
            ur: mk_u(bank, rng, &format!("{name}.ur")),
            br: mk_b(bank, rng, &format!("{name}.br")),
            wn: mk_w(bank, rng, &format!("{name}.wn")),
            un: mk_u(bank, rng, &format!("{name}.un")),
            bn: mk_b(bank, rng, &format!("{name}.bn")),
        }
    }

    pub fn step(&self, tape: &mut Tape, bank: &ParamBank, x: NodeId, h: NodeId) -> NodeId {
        assert_eq!(
            tape.value(x).len(),
            self.input_size,
            "gru input shape mismatch"
        );
        assert_eq!(
            tape.value(h).len(),
            self.hidden_size,
            "gru hidden shape mismatch"
        );
        let gate = |tape: &mut Tape, w, u, b, x, h| {
            let wn = tape.param(bank, w);
            let un = tape.param(bank, u);
            let bn = tape.param(bank, b);
            let a = tape.matvec(wn, x);
            let c = tape.matvec(un, h);
            let s = tape.add(a, c);
            tape.add(s, bn)
        };
        let z_pre = gate(tape, self.wz, self.uz, self.bz, x, h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.wr, self.ur, self.br, x, h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let n_pre = gate(tape, self.wn, self.un, self.bn, x, rh);
        let n = tape.tanh(n_pre);
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let keep = tape.mul(one_minus_z, h);
        let upd = tape.mul(z, n);
        tape.add(keep, upd)
    }
}

/// Convolutional frame encoder: 3x3 stride-2 valid convs with the channel
/// ladder 16/32/64 for as long as the spatial extent admits a kernel, then a
/// dense projection to the embedding.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub in_h: usize,
    pub in_w: usize,
    pub embed_dim: usize,
    convs: Vec<Conv>,
    fc: Dense,
    flat_dim: usize,
}

impl Encoder {
    pub fn new(
        bank: &mut ParamBank,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_h: usize,
        in_w: usize,
        embed_dim: usize,
    ) -> Self {
        let channels = [16usize, 32, 64];
        let mut convs = Vec::new();
        let (mut h, mut w, mut c) = (in_h, in_w, 3usize);
        for (i, &oc) in channels.iter().enumerate() {
            if h < 3 || w < 3 {
                break;
            }
            convs.push(Conv::new(bank, rng, &format!("{prefix}.conv{i}"), c, oc, 3, 2));
            h = (h - 3) / 2 + 1;
            w = (w - 3) / 2 + 1;
            c = oc;
        }
        let flat_dim = c * h * w;
        let fc = Dense::new(bank, rng, &format!("{prefix}.fc"), flat_dim, embed_dim);
        Encoder { in_h, in_w, embed_dim, convs, fc, flat_dim }
    }

    pub fn forward(&self, tape: &mut Tape, bank: &ParamBank, frame: NodeId) -> NodeId {
        let mut x = frame;
        for conv in &self.convs {
            let y = conv.forward(tape, bank, x);
            x = tape.relu(y);
        }
        // flatten is a shape reinterpretation; matvec only cares about length
        let flat = tape.affine(x, 1.0, 0.0);
        debug_assert_eq!(tape.value(flat).len(), self.flat_dim);
        self.fc.forward(tape, bank, flat)
    }
}

/// Fresh inverted-dropout mask.
pub fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, p: f32) -> Arc<Vec<f32>> {
    let scale = 1.0 / (1.0 - p);
    Arc::new(
        (0..n)
            .map(|_| if rng.gen::<f32>() < p { 0.0 } else { scale })
            .collect(),
    )
}
