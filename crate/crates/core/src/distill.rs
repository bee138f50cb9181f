//! Feature distillation: fine-tunes the convolutional encoder by predicting
//! the action between adjacent frames, with OD-mask augmentation on one of
//! the two frames.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::policy::frame_to_tensor;
use crate::tensor::nn::{Dense, Encoder, ParamBank};
use crate::tensor::optim::{AdamW, LrSchedule};
use crate::tensor::tape::Tape;
use crate::trajectory::{split_assignment, Split, Trajectory};
use crate::vision::{od_mask, BoundingBox, FewShotDetector};
use crate::world::Frame;
use crate::{PpgtaError, Result, N_ACTIONS};

/// One inverse-dynamics sample: adjacent frames and the action between them.
#[derive(Debug, Clone)]
pub struct InvDynPair {
    pub before: Frame,
    pub after: Frame,
    pub action: u8,
    /// Largest detected box per frame, if any (mask target).
    pub box_before: Option<BoundingBox>,
    pub box_after: Option<BoundingBox>,
}

#[derive(Debug, Default)]
pub struct InvDynDataset {
    pub train: Vec<InvDynPair>,
    pub val: Vec<InvDynPair>,
    pub test: Vec<InvDynPair>,
}

/// All adjacent frame pairs from the demonstration corpora, split 70/10/20
/// at trajectory granularity. Trajectories shorter than 2 frames are skipped
/// with a warning.
pub fn build_invdyn_dataset(trajectories: &[Trajectory]) -> InvDynDataset {
    let splits = split_assignment(trajectories.len());
    let mut ds = InvDynDataset::default();
    for (traj, split) in trajectories.iter().zip(splits.iter()) {
        if traj.steps.len() < 2 {
            eprintln!("warning: skipping trajectory with fewer than 2 frames");
            continue;
        }
        let bucket = match split {
            Split::Train => &mut ds.train,
            Split::Val => &mut ds.val,
            Split::Test => &mut ds.test,
        };
        for w in traj.steps.windows(2) {
            bucket.push(InvDynPair {
                before: w[0].0.clone(),
                after: w[1].0.clone(),
                action: w[0].1,
                box_before: None,
                box_after: None,
            });
        }
    }
    ds
}

fn largest_box(detector: &FewShotDetector, frame: &Frame) -> Option<BoundingBox> {
    detector
        .detect(frame)
        .ok()?
        .into_iter()
        .max_by_key(|b| b.area())
}

/// Precomputes mask boxes for every frame in the dataset.
pub fn attach_boxes(ds: &mut InvDynDataset, detector: &FewShotDetector) {
    for bucket in [&mut ds.train, &mut ds.val, &mut ds.test] {
        let boxes: Vec<(Option<BoundingBox>, Option<BoundingBox>)> = bucket
            .par_iter()
            .map(|p| (largest_box(detector, &p.before), largest_box(detector, &p.after)))
            .collect();
        for (p, (ba, bb)) in bucket.iter_mut().zip(boxes) {
            p.box_before = ba;
            p.box_after = bb;
        }
    }
}

/// With probability 1/2 mask exactly one of the two frames, chosen uniformly.
pub fn mask_decision(rng: &mut impl Rng) -> Option<bool> {
    if rng.gen_bool(0.5) {
        Some(rng.gen_bool(0.5))
    } else {
        None
    }
}

/// Encoder plus two-layer inverse-dynamics head over concatenated
/// embeddings.
pub struct InvDynModel {
    pub bank: ParamBank,
    pub encoder: Encoder,
    fc1: Dense,
    fc2: Dense,
}

impl InvDynModel {
    pub fn new(rng: &mut ChaCha8Rng, frame_h: usize, frame_w: usize, embed_dim: usize) -> Self {
        let mut bank = ParamBank::new();
        let encoder = Encoder::new(&mut bank, rng, "fe", frame_h, frame_w, embed_dim);
        let fc1 = Dense::new(&mut bank, rng, "invdyn.fc1", 2 * embed_dim, 128);
        let fc2 = Dense::new(&mut bank, rng, "invdyn.fc2", 128, N_ACTIONS);
        InvDynModel { bank, encoder, fc1, fc2 }
    }

    fn loss_tape(&self, pair: &InvDynPair, mask: Option<bool>) -> (Tape, f32, usize) {
        let apply = |frame: &Frame, b: &Option<BoundingBox>| match b {
            Some(bb) => od_mask(frame, bb),
            None => frame.clone(),
        };
        let (before, after) = match mask {
            Some(false) => (apply(&pair.before, &pair.box_before), pair.after.clone()),
            Some(true) => (pair.before.clone(), apply(&pair.after, &pair.box_after)),
            None => (pair.before.clone(), pair.after.clone()),
        };
        let mut tape = Tape::new();
        let a = tape.constant(frame_to_tensor(&before));
        let b = tape.constant(frame_to_tensor(&after));
        let ea = self.encoder.forward(&mut tape, &self.bank, a);
        let eb = self.encoder.forward(&mut tape, &self.bank, b);
        let cat = tape.concat(&[ea, eb]);
        let h = self.fc1.forward(&mut tape, &self.bank, cat);
        let h = tape.relu(h);
        let logits = self.fc2.forward(&mut tape, &self.bank, h);
        let pred = tape
            .value(logits)
            .data
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .unwrap();
        let loss = tape.softmax_xent(logits, pair.action as usize);
        tape.backward(loss);
        let lv = tape.scalar_value(loss);
        (tape, lv, pred)
    }

    /// Mean loss and accuracy without augmentation or gradient use.
    pub fn evaluate(&self, pairs: &[InvDynPair]) -> (f32, f32) {
        let results: Vec<(f32, bool)> = pairs
            .par_iter()
            .map(|p| {
                let (_, loss, pred) = self.loss_tape(p, None);
                (loss, pred == p.action as usize)
            })
            .collect();
        let n = results.len().max(1) as f32;
        let loss = results.iter().map(|(l, _)| l).sum::<f32>() / n;
        let acc = results.iter().filter(|(_, c)| *c).count() as f32 / n;
        (loss, acc)
    }

    /// Per-action confusion counts (rows: true action, cols: predicted).
    pub fn confusion(&self, pairs: &[InvDynPair]) -> Vec<Vec<usize>> {
        let mut m = vec![vec![0usize; N_ACTIONS]; N_ACTIONS];
        let preds: Vec<(u8, usize)> = pairs
            .par_iter()
            .map(|p| {
                let (_, _, pred) = self.loss_tape(p, None);
                (p.action, pred)
            })
            .collect();
        for (truth, pred) in preds {
            m[truth as usize][pred] += 1;
        }
        m
    }

    pub fn encode(&self, frame: &Frame) -> Result<Vec<f32>> {
        if frame.height != self.encoder.in_h || frame.width != self.encoder.in_w {
            return Err(PpgtaError::Contract(format!(
                "frame {}x{} does not match encoder input {}x{}",
                frame.width, frame.height, self.encoder.in_w, self.encoder.in_h
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(frame_to_tensor(frame));
        let e = self.encoder.forward(&mut tape, &self.bank, x);
        Ok(tape.value(e).data.clone())
    }
}

pub struct TrainEncoderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_start: f32,
    pub lr_peak: f32,
    pub warmup_epochs: f32,
    pub weight_decay: f32,
}

impl Default for TrainEncoderConfig {
    fn default() -> Self {
        TrainEncoderConfig {
            epochs: 8,
            batch_size: 64,
            seed: 0,
            lr_start: 2e-3,
            lr_peak: 1e-2,
            warmup_epochs: 10.0,
            weight_decay: 1e-4,
        }
    }
}

/// Trains the masked inverse-dynamics model, returning the parameters with
/// the best validation loss.
pub fn train_encoder(
    ds: &InvDynDataset,
    cfg: &TrainEncoderConfig,
    frame_h: usize,
    frame_w: usize,
    embed_dim: usize,
) -> Result<InvDynModel> {
    if ds.train.is_empty() {
        return Err(PpgtaError::Contract("empty inverse-dynamics training set".into()));
    }
    let mut init_rng = crate::rng::stream(cfg.seed, "fe.init");
    let mut model = InvDynModel::new(&mut init_rng, frame_h, frame_w, embed_dim);
    let mut order_rng = crate::rng::stream(cfg.seed, "fe.order");
    let mut mask_rng = crate::rng::stream(cfg.seed, "fe.mask");
    let steps_per_epoch = ds.train.len().div_ceil(cfg.batch_size);
    let schedule = LrSchedule::WarmupCosine {
        start: cfg.lr_start,
        peak: cfg.lr_peak,
        warmup_epochs: cfg.warmup_epochs,
        total_epochs: (cfg.epochs as f32).max(cfg.warmup_epochs + 1.0),
        steps_per_epoch,
    };
    let mut opt = AdamW::new(&model.bank, schedule, cfg.weight_decay);
    let mut best: Option<(f32, ParamBank)> = None;

    let mut indices: Vec<usize> = (0..ds.train.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut order_rng);
        let mut train_loss = 0.0f64;
        for chunk in indices.chunks(cfg.batch_size) {
            let masks: Vec<Option<bool>> =
                chunk.iter().map(|_| mask_decision(&mut mask_rng)).collect();
            let tapes: Vec<(Tape, f32)> = chunk
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&i, &m)| {
                    let (tape, loss, _) = model.loss_tape(&ds.train[i], m);
                    (tape, loss)
                })
                .collect();
            for (tape, loss) in &tapes {
                if !loss.is_finite() {
                    return Err(PpgtaError::Diverged("inverse-dynamics loss is NaN".into()));
                }
                train_loss += *loss as f64;
                tape.accumulate_into(&mut model.bank);
            }
            model.bank.scale_grads(1.0 / chunk.len() as f32);
            opt.step(&mut model.bank)?;
        }
        let (val_loss, val_acc) = model.evaluate(&ds.val);
        eprintln!(
            "fe epoch {epoch}: train loss {:.4} val loss {val_loss:.4} val acc {val_acc:.3}",
            train_loss / ds.train.len() as f64
        );
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.bank.clone()));
        }
    }
    if let Some((_, bank)) = best {
        model.bank = bank;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ExpertKind;

    fn traj(seed: u64, n: usize) -> Trajectory {
        let steps = (0..n)
            .map(|t| {
                let mut f = Frame::new(8, 8);
                f.pixels
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, p)| *p = ((i as u64 + seed + t as u64) % 256) as u8);
                (f, (t % 9) as u8)
            })
            .collect();
        Trajectory { kind: ExpertKind::PathFollow, seed, world_seed: 0, steps }
    }

    #[test]
    fn dataset_pairs_adjacent_frames_with_leading_action() {
        let trajs: Vec<Trajectory> = (0..10).map(|i| traj(i, 5)).collect();
        let ds = build_invdyn_dataset(&trajs);
        // 70/10/20 trajectory split, 4 pairs per 5-step trajectory
        assert_eq!(ds.train.len(), 7 * 4);
        assert_eq!(ds.val.len(), 4);
        assert_eq!(ds.test.len(), 2 * 4);
        let p = &ds.train[0];
        assert_eq!(p.action, 0);
        assert_eq!(p.before.pixels, trajs[0].steps[0].0.pixels);
        assert_eq!(p.after.pixels, trajs[0].steps[1].0.pixels);
    }

    #[test]
    fn short_trajectories_are_skipped() {
        let trajs = vec![traj(0, 1), traj(1, 3)];
        let ds = build_invdyn_dataset(&trajs);
        assert_eq!(ds.train.len() + ds.val.len() + ds.test.len(), 2);
    }

    #[test]
    fn mask_decision_hits_documented_probabilities() {
        let mut rng = crate::rng::stream(0, "distill.test");
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            match mask_decision(&mut rng) {
                None => counts[0] += 1,
                Some(false) => counts[1] += 1,
                Some(true) => counts[2] += 1,
            }
        }
        assert!((counts[0] as f64 / 10_000.0 - 0.5).abs() < 0.02);
        assert!((counts[1] as f64 / 10_000.0 - 0.25).abs() < 0.02);
        assert!((counts[2] as f64 / 10_000.0 - 0.25).abs() < 0.02);
    }

    #[test]
    fn encode_rejects_mismatched_frames() {
        let mut rng = crate::rng::stream(0, "distill.test");
        let model = InvDynModel::new(&mut rng, 8, 8, 16);
        assert!(model.encode(&Frame::new(8, 8)).is_ok());
        assert!(model.encode(&Frame::new(16, 16)).is_err());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let ds = InvDynDataset::default();
        assert!(train_encoder(&ds, &TrainEncoderConfig::default(), 8, 8, 16).is_err());
    }
}
