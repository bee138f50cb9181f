//! Memory-augmented policy network: FE backbone, local bi-directional GRU
//! over the last K frames, global GRU over the whole trajectory, MLP action
//! head with layer normalization and dropout.

use rand_chacha::ChaCha8Rng;

use crate::tensor::nn::{dropout_mask, Dense, Encoder, GruCell, LayerNormParams, ParamBank};
use crate::tensor::tape::{softmax, NodeId, Tape};
use crate::tensor::Tensor;
use crate::world::Frame;
use crate::{PpgtaError, Result, N_ACTIONS};

#[derive(Debug, Clone)]
pub struct PolicyConfig {
    pub frame_h: usize,
    pub frame_w: usize,
    pub embed_dim: usize,
    pub local_hidden: usize,
    pub global_hidden: usize,
    pub k_window: usize,
    pub dropout: f32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            frame_h: 32,
            frame_w: 32,
            embed_dim: 128,
            local_hidden: 32,
            global_hidden: 64,
            k_window: 4,
            dropout: 0.2,
        }
    }
}

impl PolicyConfig {
    /// Width of the concatenated state h^c = [h^l ; h^g].
    pub fn hc_dim(&self) -> usize {
        2 * self.local_hidden + self.global_hidden
    }
}

pub fn frame_to_tensor(frame: &Frame) -> Tensor {
    let (w, h) = (frame.width, frame.height);
    let mut data = vec![0.0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = frame.get(x, y);
            data[y * w + x] = r as f32 / 255.0;
            data[w * h + y * w + x] = g as f32 / 255.0;
            data[2 * w * h + y * w + x] = b as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub struct PolicyNet {
    pub bank: ParamBank,
    pub cfg: PolicyConfig,
    pub encoder: Encoder,
    local_fwd: GruCell,
    local_bwd: GruCell,
    global: GruCell,
    fc1: Dense,
    ln1: LayerNormParams,
    fc2: Dense,
    ln2: LayerNormParams,
    action_head: Dense,
}

/// Node handles produced by one policy forward pass.
pub struct PolicyOut {
    pub logits: NodeId,
    pub hc: NodeId,
    pub trunk: NodeId,
    pub new_global: NodeId,
}

pub enum Mode<'r> {
    Infer,
    Train(&'r mut ChaCha8Rng),
}

impl PolicyNet {
    pub fn new(rng: &mut ChaCha8Rng, cfg: PolicyConfig) -> Self {
        let mut bank = ParamBank::new();
        let encoder = Encoder::new(&mut bank, rng, "fe", cfg.frame_h, cfg.frame_w, cfg.embed_dim);
        let local_fwd = GruCell::new(&mut bank, rng, "local_fwd", cfg.embed_dim, cfg.local_hidden);
        let local_bwd = GruCell::new(&mut bank, rng, "local_bwd", cfg.embed_dim, cfg.local_hidden);
        let global = GruCell::new(&mut bank, rng, "global", cfg.embed_dim, cfg.global_hidden);
        let hc = cfg.hc_dim();
        let fc1 = Dense::new(&mut bank, rng, "head.fc1", hc, 64);
        let ln1 = LayerNormParams::new(&mut bank, "head.ln1", 64);
        let fc2 = Dense::new(&mut bank, rng, "head.fc2", 64, 32);
        let ln2 = LayerNormParams::new(&mut bank, "head.ln2", 32);
        let action_head = Dense::new(&mut bank, rng, "head.act", 32, N_ACTIONS);
        PolicyNet {
            bank,
            cfg,
            encoder,
            local_fwd,
            local_bwd,
            global,
            fc1,
            ln1,
            fc2,
            ln2,
            action_head,
        }
    }

    /// Rebuilds the layer handles around an existing bank with the same
    /// layout (e.g. an EMA teacher copy of a student bank).
    pub fn from_bank(bank: ParamBank, cfg: PolicyConfig) -> Self {
        let mut shape_rng = crate::rng::stream(0, "policy.shape");
        let mut net = PolicyNet::new(&mut shape_rng, cfg);
        debug_assert_eq!(net.bank.len(), bank.len());
        net.bank = bank;
        net
    }

    pub fn zero_global_state(&self) -> Tensor {
        Tensor::zeros(&[self.cfg.global_hidden])
    }

    /// Runs the architecture over a K-frame window plus carried global
    /// state. Dropout fires only in training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        window: &[Frame],
        global_state: &Tensor,
        mode: &mut Mode,
    ) -> Result<PolicyOut> {
        if window.len() != self.cfg.k_window {
            return Err(PpgtaError::Contract(format!(
                "window length {} != K={}",
                window.len(),
                self.cfg.k_window
            )));
        }
        let embeds: Vec<NodeId> = window
            .iter()
            .map(|f| {
                let x = tape.constant(frame_to_tensor(f));
                self.encoder.forward(tape, &self.bank, x)
            })
            .collect();
        self.forward_from_embeds(tape, &embeds, global_state, mode)
    }

    /// Embeds a single frame with no gradient bookkeeping. Rollouts cache
    /// these so the recurrent trunk can be re-run without re-encoding.
    pub fn embed_frame(&self, frame: &Frame) -> Tensor {
        let mut tape = Tape::new();
        let x = tape.constant(frame_to_tensor(frame));
        let e = self.encoder.forward(&mut tape, &self.bank, x);
        tape.value(e).clone()
    }

    /// Same architecture as `forward`, but starting from precomputed frame
    /// embeddings treated as constants (the encoder stays frozen).
    pub fn forward_cached(
        &self,
        tape: &mut Tape,
        embeds: &[Tensor],
        global_state: &Tensor,
        mode: &mut Mode,
    ) -> Result<PolicyOut> {
        if embeds.len() != self.cfg.k_window {
            return Err(PpgtaError::Contract(format!(
                "embedding window length {} != K={}",
                embeds.len(),
                self.cfg.k_window
            )));
        }
        let nodes: Vec<NodeId> = embeds.iter().map(|e| tape.constant(e.clone())).collect();
        self.forward_from_embeds(tape, &nodes, global_state, mode)
    }

    fn forward_from_embeds(
        &self,
        tape: &mut Tape,
        embeds: &[NodeId],
        global_state: &Tensor,
        mode: &mut Mode,
    ) -> Result<PolicyOut> {
        let mut hf = tape.constant(Tensor::zeros(&[self.cfg.local_hidden]));
        for &e in embeds {
            hf = self.local_fwd.step(tape, &self.bank, e, hf);
        }
        let mut hb = tape.constant(Tensor::zeros(&[self.cfg.local_hidden]));
        for &e in embeds.iter().rev() {
            hb = self.local_bwd.step(tape, &self.bank, e, hb);
        }
        let hl = tape.concat(&[hf, hb]);

        let g_prev = tape.constant(global_state.clone());
        let current = *embeds.last().unwrap();
        let new_global = self.global.step(tape, &self.bank, current, g_prev);
        let hc = tape.concat(&[hl, new_global]);

        let trunk = self.mlp_trunk(tape, hc, mode);
        let logits = self.action_head.forward(tape, &self.bank, trunk);
        Ok(PolicyOut { logits, hc, trunk, new_global })
    }

    fn mlp_trunk(&self, tape: &mut Tape, hc: NodeId, mode: &mut Mode) -> NodeId {
        let mut apply = |tape: &mut Tape, fc: &Dense, ln: &LayerNormParams, x: NodeId| {
            let y = fc.forward(tape, &self.bank, x);
            let y = ln.forward(tape, &self.bank, y);
            let y = tape.relu(y);
            match mode {
                Mode::Infer => y,
                Mode::Train(rng) => {
                    let n = tape.value(y).len();
                    let mask = dropout_mask(rng, n, self.cfg.dropout);
                    tape.dropout(y, mask)
                }
            }
        };
        let h1 = apply(tape, &self.fc1, &self.ln1, hc);
        apply(tape, &self.fc2, &self.ln2, h1)
    }

    /// Deterministic inference pass; returns (action probabilities, h^c
    /// values, new global state values).
    pub fn infer(
        &self,
        window: &[Frame],
        global_state: &Tensor,
    ) -> Result<(Vec<f32>, Vec<f32>, Tensor)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, window, global_state, &mut Mode::Infer)?;
        let probs = softmax(&tape.value(out.logits).data);
        let hc = tape.value(out.hc).data.clone();
        let g = tape.value(out.new_global).clone();
        Ok((probs, hc, g))
    }
}

/// Sliding K-frame observation window, padded with the first frame.
pub struct FrameWindow {
    k: usize,
    frames: Vec<Frame>,
}

impl FrameWindow {
    pub fn new(k: usize) -> Self {
        FrameWindow { k, frames: Vec::new() }
    }

    pub fn push(&mut self, frame: Frame) {
        if self.frames.is_empty() {
            self.frames = vec![frame; self.k];
        } else {
            self.frames.remove(0);
            self.frames.push(frame);
        }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn is_ready(&self) -> bool {
        !self.frames.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(fill: u8) -> Frame {
        let mut f = Frame::new(8, 8);
        f.pixels.iter_mut().for_each(|p| *p = fill);
        f
    }

    fn small_cfg() -> PolicyConfig {
        PolicyConfig {
            frame_h: 8,
            frame_w: 8,
            embed_dim: 16,
            local_hidden: 8,
            global_hidden: 8,
            k_window: 3,
            dropout: 0.2,
        }
    }

    #[test]
    fn frame_window_pads_with_first_frame() {
        let mut w = FrameWindow::new(3);
        assert!(!w.is_ready());
        w.push(frame(1));
        assert!(w.is_ready());
        assert_eq!(w.frames().len(), 3);
        assert!(w.frames().iter().all(|f| f.pixels[0] == 1));
        w.push(frame(2));
        let fills: Vec<u8> = w.frames().iter().map(|f| f.pixels[0]).collect();
        assert_eq!(fills, vec![1, 1, 2]);
        w.push(frame(3));
        w.push(frame(4));
        let fills: Vec<u8> = w.frames().iter().map(|f| f.pixels[0]).collect();
        assert_eq!(fills, vec![2, 3, 4]);
    }

    #[test]
    fn frame_to_tensor_is_planar_and_normalized() {
        let mut f = Frame::new(2, 1);
        f.set(0, 0, (255, 0, 51));
        f.set(1, 0, (0, 255, 102));
        let t = frame_to_tensor(&f);
        assert_eq!(t.shape, vec![3, 1, 2]);
        assert_eq!(t.data[0], 1.0);
        assert_eq!(t.data[1], 0.0);
        assert_eq!(t.data[2], 0.0);
        assert_eq!(t.data[3], 1.0);
        assert!((t.data[4] - 0.2).abs() < 1e-6);
        assert!((t.data[5] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn infer_is_deterministic_and_normalized() {
        let cfg = small_cfg();
        let mut rng = crate::rng::stream(5, "policy.test");
        let net = PolicyNet::new(&mut rng, cfg.clone());
        let window = vec![frame(10), frame(20), frame(30)];
        let g = net.zero_global_state();
        let (p1, hc1, g1) = net.infer(&window, &g).unwrap();
        let (p2, hc2, g2) = net.infer(&window, &g).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(hc1, hc2);
        assert_eq!(g1.data, g2.data);
        assert!((p1.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert_eq!(hc1.len(), cfg.hc_dim());
        assert_ne!(g1.data, g.data, "global state must advance");
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let cfg = small_cfg();
        let mut rng = crate::rng::stream(5, "policy.test");
        let net = PolicyNet::new(&mut rng, cfg);
        let g = net.zero_global_state();
        assert!(net.infer(&[frame(1)], &g).is_err());
    }

    #[test]
    fn from_bank_reproduces_the_same_function() {
        let cfg = small_cfg();
        let mut rng = crate::rng::stream(6, "policy.test");
        let net = PolicyNet::new(&mut rng, cfg.clone());
        let clone = PolicyNet::from_bank(net.bank.clone(), cfg);
        let window = vec![frame(1), frame(2), frame(3)];
        let g = net.zero_global_state();
        let (p1, _, _) = net.infer(&window, &g).unwrap();
        let (p2, _, _) = clone.infer(&window, &g).unwrap();
        assert_eq!(p1, p2);
    }
}
