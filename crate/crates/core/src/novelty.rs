//! Ensemble-RND novelty rewards: a frozen random target network, N
//! independently trained predictors, and prediction variance as the
//! intrinsic reward, fed from a replay buffer of OD-masked downsampled
//! frames.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

use crate::tensor::nn::{Dense, Encoder, ParamBank};
use crate::tensor::optim::{AdamW, LrSchedule};
use crate::tensor::tape::Tape;
use crate::vision::{downsample, od_mask, BoundingBox};
use crate::world::Frame;
use crate::{PpgtaError, Result};

pub const RND_INPUT: usize = 16;
pub const RND_HIDDEN: usize = 64;
pub const PROJECTION_DIM: usize = 32;
pub const ENSEMBLE_SIZE: usize = 5;
pub const REPLAY_CAPACITY: usize = 1024;

/// Conv encoder at 16x16 plus a 64 -> 32 projection head.
struct RndNet {
    bank: ParamBank,
    encoder: Encoder,
    proj: Dense,
}

impl RndNet {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut bank = ParamBank::new();
        let encoder = Encoder::new(&mut bank, rng, "rnd.enc", RND_INPUT, RND_INPUT, RND_HIDDEN);
        let proj = Dense::new(&mut bank, rng, "rnd.proj", RND_HIDDEN, PROJECTION_DIM);
        RndNet { bank, encoder, proj }
    }

    fn forward_tape(&self, tape: &mut Tape, frame: &Frame) -> crate::tensor::tape::NodeId {
        let x = tape.constant(crate::policy::frame_to_tensor(frame));
        let h = self.encoder.forward(tape, &self.bank, x);
        let h = tape.relu(h);
        self.proj.forward(tape, &self.bank, h)
    }

    fn project(&self, frame: &Frame) -> Vec<f32> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, frame);
        tape.value(out).data.clone()
    }
}

/// Frozen random projection network.
pub struct RndTarget {
    net: RndNet,
}

impl RndTarget {
    pub fn new(seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "rnd.target");
        RndTarget { net: RndNet::new(&mut rng) }
    }

    pub fn project(&self, frame: &Frame) -> Vec<f32> {
        self.net.project(frame)
    }
}

pub struct PredictorEnsemble {
    members: Vec<RndNet>,
    opts: Vec<AdamW>,
}

impl PredictorEnsemble {
    pub fn new(seed: u64, n: usize) -> Self {
        let members: Vec<RndNet> = (0..n)
            .map(|i| {
                let mut rng = crate::rng::stream(seed, &format!("rnd.predictor.{i}"));
                RndNet::new(&mut rng)
            })
            .collect();
        let opts = members
            .iter()
            .map(|m| AdamW::new(&m.bank, LrSchedule::Constant(1e-3), 0.0))
            .collect();
        PredictorEnsemble { members, opts }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn predictions(&self, frame: &Frame) -> Vec<Vec<f32>> {
        self.members.par_iter().map(|m| m.project(frame)).collect()
    }

    /// Forces every member to the first member's parameters (test hook for
    /// the zero-variance degenerate case).
    pub fn collapse_members(&mut self) {
        let first = self.members[0].bank.clone();
        for m in &mut self.members[1..] {
            m.bank.copy_values_from(&first).unwrap();
        }
    }

    /// Rewrites member `i` so it outputs the constant vector `v` in every
    /// projection dimension (test hook for the closed-form variance case).
    pub fn set_constant_output(&mut self, i: usize, v: f32) {
        let bank = &mut self.members[i].bank;
        for idx in 0..bank.len() {
            let name = bank.name(idx).to_string();
            let t = bank.value_mut(idx);
            let fill = if name == "rnd.proj.b" { v } else { 0.0 };
            for x in t.data.iter_mut() {
                *x = fill;
            }
        }
    }

    /// Drops all members but the first `n` (test hook: n=1 gives plain RND
    /// whose "reward" is the prediction error, handled by `member_errors`).
    pub fn truncate(&mut self, n: usize) {
        self.members.truncate(n);
        self.opts.truncate(n);
    }
}

/// Ring buffer of preprocessed frames, oldest evicted first.
pub struct ReplayBuffer {
    frames: Vec<Frame>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { frames: Vec::new(), capacity, next: 0 }
    }

    pub fn push(&mut self, frame: Frame) {
        if self.frames.len() < self.capacity {
            self.frames.push(frame);
        } else {
            self.frames[self.next] = frame;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, i: usize) -> &Frame {
        &self.frames[i]
    }
}

/// OD-mask with the largest detected box (identity when none), then
/// downsample to the RND input extent.
pub fn preprocess(frame: &Frame, detections: &[BoundingBox]) -> Frame {
    let masked = match detections.iter().max_by_key(|b| b.area()) {
        Some(b) => od_mask(frame, b),
        None => frame.clone(),
    };
    downsample(&masked, RND_INPUT, RND_INPUT)
}

/// Variance across ensemble predictions, averaged over projection
/// dimensions. The frame must already be preprocessed.
pub fn intrinsic_reward(ensemble: &PredictorEnsemble, frame: &Frame) -> f32 {
    let preds = ensemble.predictions(frame);
    let n = preds.len();
    if n == 0 {
        return 0.0;
    }
    let dims = preds[0].len();
    let mut total = 0.0f64;
    for d in 0..dims {
        let mean: f64 = preds.iter().map(|p| p[d] as f64).sum::<f64>() / n as f64;
        let var: f64 = preds
            .iter()
            .map(|p| {
                let e = p[d] as f64 - mean;
                e * e
            })
            .sum::<f64>()
            / n as f64;
        total += var;
    }
    (total / dims as f64) as f32
}

/// Runs `steps` gradient steps per member, each on an independently drawn
/// uniform minibatch from the buffer.
pub fn train_predictors(
    ensemble: &mut PredictorEnsemble,
    target: &RndTarget,
    buffer: &ReplayBuffer,
    steps: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if buffer.is_empty() {
        return Err(PpgtaError::Contract("replay buffer is empty".into()));
    }
    for _ in 0..steps {
        // draw indices sequentially so determinism survives the parallel pass
        let draws: Vec<Vec<usize>> = (0..ensemble.len())
            .map(|_| {
                (0..batch_size)
                    .map(|_| rng.gen_range(0..buffer.len()))
                    .collect()
            })
            .collect();
        let failed = ensemble
            .members
            .par_iter_mut()
            .zip(ensemble.opts.par_iter_mut())
            .zip(draws.par_iter())
            .map(|((member, opt), indices)| {
                for &i in indices {
                    let frame = buffer.get(i);
                    let goal = target.project(frame);
                    let mut tape = Tape::new();
                    let pred = member.forward_tape(&mut tape, frame);
                    let loss = tape.mse_to(pred, Arc::new(goal));
                    if !tape.scalar_value(loss).is_finite() {
                        return Err(PpgtaError::Diverged("RND predictor loss is NaN".into()));
                    }
                    tape.backward(loss);
                    tape.accumulate_into(&mut member.bank);
                }
                member.bank.scale_grads(1.0 / indices.len() as f32);
                opt.step(&mut member.bank)
            })
            .find_any(|r| r.is_err());
        if let Some(err) = failed {
            err?;
        }
    }
    Ok(())
}

/// Mean MSE of each member against the target on one frame.
pub fn member_errors(ensemble: &PredictorEnsemble, target: &RndTarget, frame: &Frame) -> Vec<f32> {
    let goal = target.project(frame);
    ensemble
        .predictions(frame)
        .iter()
        .map(|p| {
            p.iter()
                .zip(&goal)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f32>()
                / p.len() as f32
        })
        .collect()
}

/// Welford running standard deviation used to normalize r^e before mixing.
/// Disabled instances pass rewards through unchanged.
#[derive(Debug, Clone)]
pub struct RunningStd {
    enabled: bool,
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStd {
    pub fn new(enabled: bool) -> Self {
        RunningStd { enabled, count: 0, mean: 0.0, m2: 0.0 }
    }

    pub fn normalize(&mut self, r: f32) -> f32 {
        if !self.enabled {
            return r;
        }
        self.count += 1;
        let d = r as f64 - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (r as f64 - self.mean);
        if self.count < 2 {
            return r;
        }
        let std = (self.m2 / self.count as f64).sqrt();
        (r as f64 / (std + 1e-8)) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: u64, w: usize, h: usize) -> Frame {
        let mut rng = crate::rng::stream(seed, "novelty.test");
        let mut f = Frame::new(w, h);
        f.pixels.iter_mut().for_each(|p| *p = rng.gen());
        f
    }

    #[test]
    fn identical_members_give_zero_reward() {
        let mut ens = PredictorEnsemble::new(1, 3);
        ens.collapse_members();
        let r = intrinsic_reward(&ens, &frame(2, RND_INPUT, RND_INPUT));
        assert_eq!(r, 0.0);
    }

    #[test]
    fn constant_members_match_closed_form_variance() {
        // outputs 0 and 2 in every dim: mean 1, population variance 1
        let mut ens = PredictorEnsemble::new(3, 5);
        ens.truncate(2);
        ens.set_constant_output(0, 0.0);
        ens.set_constant_output(1, 2.0);
        let r = intrinsic_reward(&ens, &frame(4, RND_INPUT, RND_INPUT));
        assert_eq!(r, 1.0);
    }

    #[test]
    fn training_reduces_member_error() {
        let target = RndTarget::new(5);
        let mut ens = PredictorEnsemble::new(6, 2);
        let mut buffer = ReplayBuffer::new(8);
        for s in 0..4 {
            buffer.push(frame(10 + s, RND_INPUT, RND_INPUT));
        }
        let probe = buffer.get(0).clone();
        let before: f32 = member_errors(&ens, &target, &probe).iter().sum();
        let mut rng = crate::rng::stream(7, "novelty.test.order");
        train_predictors(&mut ens, &target, &buffer, 60, 4, &mut rng).unwrap();
        let after: f32 = member_errors(&ens, &target, &probe).iter().sum();
        assert!(after < before * 0.8, "before {before} after {after}");
    }

    #[test]
    fn empty_buffer_is_rejected() {
        let target = RndTarget::new(0);
        let mut ens = PredictorEnsemble::new(0, 2);
        let buffer = ReplayBuffer::new(4);
        let mut rng = crate::rng::stream(0, "novelty.test.order");
        assert!(train_predictors(&mut ens, &target, &buffer, 1, 4, &mut rng).is_err());
    }

    #[test]
    fn replay_buffer_wraps_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for s in 0..5u64 {
            buf.push(frame(s, 2, 2));
        }
        assert_eq!(buf.len(), 3);
        // slots now hold frames 3, 4, 2
        assert_eq!(buf.get(0).pixels, frame(3, 2, 2).pixels);
        assert_eq!(buf.get(1).pixels, frame(4, 2, 2).pixels);
        assert_eq!(buf.get(2).pixels, frame(2, 2, 2).pixels);
    }

    #[test]
    fn preprocess_downsamples_to_rnd_input() {
        let f = frame(20, 48, 48);
        let out = preprocess(&f, &[]);
        assert_eq!((out.width, out.height), (RND_INPUT, RND_INPUT));
        let b = BoundingBox { x0: 0, y0: 0, x1: 10, y1: 10, ooi_type: 0, score: 1.0 };
        let masked = preprocess(&f, &[b]);
        assert_eq!((masked.width, masked.height), (RND_INPUT, RND_INPUT));
        assert_ne!(masked.pixels, out.pixels);
    }

    #[test]
    fn running_std_matches_direct_computation() {
        let xs = [1.0f32, 4.0, -2.0, 0.5, 3.0, 3.0];
        let mut rs = RunningStd::new(true);
        let mut last = 0.0;
        for x in xs {
            last = rs.normalize(x);
        }
        let n = xs.len() as f64;
        let mean: f64 = xs.iter().map(|v| *v as f64).sum::<f64>() / n;
        let var: f64 = xs.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
        let expect = (3.0 / (var.sqrt() + 1e-8)) as f32;
        assert!((last - expect).abs() < 1e-6);

        let mut off = RunningStd::new(false);
        assert_eq!(off.normalize(7.5), 7.5);
    }
}
