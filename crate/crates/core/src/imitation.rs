//! Teacher/student imitation learning: cross-entropy to expert actions plus
//! a temperature-scaled consistency term between the student's and the EMA
//! teacher's concatenated memory states, with JS-divergence behavior
//! evaluation.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rayon::prelude::*;
use std::sync::Arc;

use crate::policy::{FrameWindow, Mode, PolicyConfig, PolicyNet};
use crate::tensor::divergence::{js_divergence, smoothed_histogram};
use crate::tensor::nn::ema_update;
use crate::tensor::optim::{AdamW, LrSchedule};
use crate::tensor::tape::{softmax, NodeId, Tape};
use crate::trajectory::{Split, Trajectory};
use crate::vision::FewShotDetector;
use crate::world::Frame;
use crate::{PpgtaError, Result, N_ACTIONS};

#[derive(Debug, Clone)]
pub struct IlConfig {
    pub policy: PolicyConfig,
    pub lambda: f32,
    pub tau_teacher: f32,
    pub tau_student: f32,
    pub ema_momentum: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub lr_start: f32,
    pub lr_peak: f32,
    pub warmup_epochs: f32,
    pub weight_decay: f32,
}

impl Default for IlConfig {
    fn default() -> Self {
        IlConfig {
            policy: PolicyConfig::default(),
            lambda: 0.5,
            tau_teacher: 0.04,
            tau_student: 0.1,
            ema_momentum: 0.996,
            epochs: 40,
            batch_size: 64,
            patience: 5,
            seed: 0,
            lr_start: 2e-3,
            lr_peak: 1e-2,
            warmup_epochs: 10.0,
            weight_decay: 1e-4,
        }
    }
}

/// Eq.-style training loss on one step: cross-entropy to the expert action
/// plus lambda times the consistency cross-entropy between softened teacher
/// and student memory states. The teacher state enters as a constant.
pub fn imitation_loss(
    tape: &mut Tape,
    student_logits: NodeId,
    student_hc: NodeId,
    teacher_hc: &[f32],
    expert_action: u8,
    cfg: &IlConfig,
) -> Result<NodeId> {
    if cfg.lambda < 0.0 {
        return Err(PpgtaError::Contract("lambda must be non-negative".into()));
    }
    if tape.value(student_hc).len() != teacher_hc.len() {
        return Err(PpgtaError::Contract("memory state width mismatch".into()));
    }
    let ce = tape.softmax_xent(student_logits, expert_action as usize);
    if cfg.lambda == 0.0 {
        return Ok(ce);
    }
    let scaled: Vec<f32> = teacher_hc.iter().map(|v| v / cfg.tau_teacher).collect();
    let target = softmax(&scaled);
    let cons = tape.softmax_xent_soft(student_hc, Arc::new(target), cfg.tau_student);
    let cons = tape.affine(cons, cfg.lambda, 0.0);
    Ok(tape.add(ce, cons))
}

/// One trajectory prepared for training: raw frames for the teacher, masked
/// frames for the student, expert actions.
struct PreparedTraj {
    full: Vec<Frame>,
    masked: Vec<Frame>,
    actions: Vec<u8>,
}

fn prepare(traj: &Trajectory, detector: Option<&FewShotDetector>) -> PreparedTraj {
    let full: Vec<Frame> = traj.steps.iter().map(|(f, _)| f.clone()).collect();
    let masked: Vec<Frame> = full
        .par_iter()
        .map(|f| match detector {
            Some(d) => match d.detect(f).ok().and_then(|bs| bs.into_iter().max_by_key(|b| b.area())) {
                Some(b) => crate::vision::od_mask(f, &b),
                None => f.clone(),
            },
            None => f.clone(),
        })
        .collect();
    PreparedTraj { full, masked, actions: traj.actions() }
}

fn window_at(frames: &[Frame], t: usize, k: usize) -> Vec<Frame> {
    let mut w = FrameWindow::new(k);
    let lo = t.saturating_sub(k - 1);
    for f in &frames[lo..=t] {
        w.push(f.clone());
    }
    w.frames().to_vec()
}

/// Trained student plus the validation-derived success threshold.
pub struct IlResult {
    pub student: PolicyNet,
    pub success_threshold: f32,
    pub val_loss: f32,
}

/// Trains the student with the EMA teacher, early-stops on validation
/// cross-entropy, and derives the JS success threshold from validation
/// trajectories.
pub fn train_imitation(
    corpus: &[(Trajectory, Split)],
    detector: Option<&FewShotDetector>,
    warm_start: Option<&crate::tensor::nn::ParamBank>,
    cfg: &IlConfig,
) -> Result<IlResult> {
    let train: Vec<&Trajectory> = corpus
        .iter()
        .filter(|(t, s)| *s == Split::Train && t.steps.len() >= 2)
        .map(|(t, _)| t)
        .collect();
    let val: Vec<&Trajectory> = corpus
        .iter()
        .filter(|(t, s)| *s == Split::Val && t.steps.len() >= 2)
        .map(|(t, _)| t)
        .collect();
    if train.is_empty() || val.is_empty() {
        return Err(PpgtaError::Contract("imitation corpus split is empty".into()));
    }

    let prepared_train: Vec<PreparedTraj> =
        train.par_iter().map(|t| prepare(t, detector)).collect();
    let prepared_val: Vec<PreparedTraj> = val.par_iter().map(|t| prepare(t, detector)).collect();

    let mut init_rng = crate::rng::stream(cfg.seed, "il.init");
    let mut student = PolicyNet::new(&mut init_rng, cfg.policy.clone());
    if let Some(bank) = warm_start {
        student.bank.copy_overlapping_from(bank);
    }
    let mut teacher_bank = student.bank.clone();
    let mut order_rng = crate::rng::stream(cfg.seed, "il.order");
    let mut drop_rng = crate::rng::stream(cfg.seed, "il.dropout");

    let n_steps: usize = prepared_train.iter().map(|p| p.actions.len()).sum();
    let steps_per_epoch = n_steps.div_ceil(cfg.batch_size);
    let schedule = LrSchedule::WarmupCosine {
        start: cfg.lr_start,
        peak: cfg.lr_peak,
        warmup_epochs: cfg.warmup_epochs,
        total_epochs: (cfg.epochs as f32).max(cfg.warmup_epochs + 1.0),
        steps_per_epoch,
    };
    let mut opt = AdamW::new(&student.bank, schedule, cfg.weight_decay);

    let mut best: Option<(f32, crate::tensor::nn::ParamBank)> = None;
    let mut stale = 0usize;
    let mut traj_order: Vec<usize> = (0..prepared_train.len()).collect();
    let k = cfg.policy.k_window;

    for _epoch in 0..cfg.epochs {
        traj_order.shuffle(&mut order_rng);

        // trajectory-sequential scan so the global state carries correctly;
        // optimizer steps fire every batch_size samples
        let mut pending = 0usize;
        for &ti in &traj_order {
            let traj = &prepared_train[ti];
            // teacher memory states over full frames, frozen for the epoch pass
            let teacher = PolicyNet::from_bank(teacher_bank.clone(), cfg.policy.clone());
            let mut tg = teacher.zero_global_state();
            let mut sg = student.zero_global_state();
            for t in 0..traj.actions.len() {
                let t_window = window_at(&traj.full, t, k);
                let (_, teacher_hc, tg_next) = teacher.infer(&t_window, &tg)?;
                tg = tg_next;

                let s_window = window_at(&traj.masked, t, k);
                let mut tape = Tape::new();
                let out = student.forward(
                    &mut tape,
                    &s_window,
                    &sg,
                    &mut Mode::Train(&mut drop_rng),
                )?;
                let loss = imitation_loss(
                    &mut tape,
                    out.logits,
                    out.hc,
                    &teacher_hc,
                    traj.actions[t],
                    cfg,
                )?;
                if !tape.scalar_value(loss).is_finite() {
                    return Err(PpgtaError::Diverged("imitation loss is NaN".into()));
                }
                tape.backward(loss);
                sg = tape.value(out.new_global).clone();
                tape.accumulate_into(&mut student.bank);
                pending += 1;
                if pending == cfg.batch_size {
                    student.bank.scale_grads(1.0 / pending as f32);
                    opt.step(&mut student.bank)?;
                    ema_update(&mut teacher_bank, &student.bank, cfg.ema_momentum)?;
                    pending = 0;
                }
            }
        }
        if pending > 0 {
            student.bank.scale_grads(1.0 / pending as f32);
            opt.step(&mut student.bank)?;
            ema_update(&mut teacher_bank, &student.bank, cfg.ema_momentum)?;
        }

        let val_ce = validation_ce(&student, &prepared_val, k)?;
        if best.as_ref().map_or(true, |(b, _)| val_ce < *b) {
            best = Some((val_ce, student.bank.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (val_loss, bank) = best.unwrap();
    student.bank = bank;
    let success_threshold = derive_success_threshold(&student, &prepared_val, k, cfg.seed)?;
    Ok(IlResult { student, success_threshold, val_loss })
}

/// Mean action cross-entropy of the student on masked validation inputs.
fn validation_ce(student: &PolicyNet, val: &[PreparedTraj], k: usize) -> Result<f32> {
    let mut total = 0.0f64;
    let mut n = 0usize;
    for traj in val {
        let mut g = student.zero_global_state();
        for t in 0..traj.actions.len() {
            let window = window_at(&traj.masked, t, k);
            let (probs, _, g_next) = student.infer(&window, &g)?;
            g = g_next;
            total += -(probs[traj.actions[t] as usize].max(1e-30) as f64).ln();
            n += 1;
        }
    }
    Ok((total / n.max(1) as f64) as f32)
}

/// Mean JS divergence between the student's sampled action histogram and
/// the expert's, over validation trajectories.
fn derive_success_threshold(
    student: &PolicyNet,
    val: &[PreparedTraj],
    k: usize,
    seed: u64,
) -> Result<f32> {
    let mut rng = crate::rng::stream(seed, "il.threshold");
    let mut total = 0.0f64;
    for traj in val {
        let mut g = student.zero_global_state();
        let mut sampled = Vec::with_capacity(traj.actions.len());
        for t in 0..traj.actions.len() {
            let window = window_at(&traj.masked, t, k);
            let (probs, _, g_next) = student.infer(&window, &g)?;
            g = g_next;
            let dist = WeightedIndex::new(&probs)
                .map_err(|_| PpgtaError::Diverged("degenerate action distribution".into()))?;
            sampled.push(dist.sample(&mut rng) as u8);
        }
        let p = smoothed_histogram(&sampled, N_ACTIONS);
        let q = smoothed_histogram(&traj.actions, N_ACTIONS);
        total += js_divergence(&p, &q)? as f64;
    }
    Ok((total / val.len() as f64) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Success,
    Failed,
}

/// JS divergence between a rollout's action histogram and the pooled expert
/// histogram, thresholded into a verdict.
pub fn evaluate_test_execution(
    rollout_actions: &[u8],
    expert_actions: &[u8],
    success_threshold: f32,
) -> Result<(f32, Verdict)> {
    if rollout_actions.is_empty() {
        return Err(PpgtaError::Contract("empty rollout".into()));
    }
    let p = smoothed_histogram(rollout_actions, N_ACTIONS);
    let q = smoothed_histogram(expert_actions, N_ACTIONS);
    let js = js_divergence(&p, &q)?;
    let verdict = if js <= success_threshold {
        Verdict::Success
    } else {
        Verdict::Failed
    };
    Ok((js, verdict))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn small_cfg(lambda: f32) -> IlConfig {
        IlConfig {
            policy: PolicyConfig {
                frame_h: 8,
                frame_w: 8,
                embed_dim: 16,
                local_hidden: 8,
                global_hidden: 8,
                k_window: 2,
                dropout: 0.0,
            },
            lambda,
            ..IlConfig::default()
        }
    }

    fn forward_once(cfg: &IlConfig) -> (Tape, crate::policy::PolicyOut) {
        let mut rng = crate::rng::stream(1, "il.test");
        let net = PolicyNet::new(&mut rng, cfg.policy.clone());
        let mut f = Frame::new(8, 8);
        f.pixels.iter_mut().enumerate().for_each(|(i, p)| *p = (i % 251) as u8);
        let frames = vec![f.clone(), f];
        let g = net.zero_global_state();
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, &frames, &g, &mut Mode::Infer).unwrap();
        (tape, out)
    }

    #[test]
    fn lambda_zero_is_plain_cross_entropy() {
        let cfg = small_cfg(0.0);
        let (mut tape, out) = forward_once(&cfg);
        let teacher_hc = vec![0.1f32; cfg.policy.hc_dim()];
        let loss = imitation_loss(&mut tape, out.logits, out.hc, &teacher_hc, 3, &cfg).unwrap();
        let plain = tape.softmax_xent(out.logits, 3);
        assert_eq!(tape.scalar_value(loss), tape.scalar_value(plain));
    }

    #[test]
    fn consistency_term_increases_the_loss() {
        let cfg0 = small_cfg(0.0);
        let cfg1 = small_cfg(0.5);
        let (mut tape, out) = forward_once(&cfg0);
        let teacher_hc = vec![0.1f32; cfg0.policy.hc_dim()];
        let l0 = imitation_loss(&mut tape, out.logits, out.hc, &teacher_hc, 3, &cfg0).unwrap();
        let l1 = imitation_loss(&mut tape, out.logits, out.hc, &teacher_hc, 3, &cfg1).unwrap();
        assert!(tape.scalar_value(l1) > tape.scalar_value(l0));
    }

    #[test]
    fn loss_contract_violations_are_rejected() {
        let cfg = small_cfg(0.5);
        let (mut tape, out) = forward_once(&cfg);
        let short_hc = vec![0.1f32; 3];
        assert!(imitation_loss(&mut tape, out.logits, out.hc, &short_hc, 3, &cfg).is_err());
        let bad = IlConfig { lambda: -1.0, ..cfg.clone() };
        let hc = vec![0.1f32; cfg.policy.hc_dim()];
        assert!(imitation_loss(&mut tape, out.logits, out.hc, &hc, 3, &bad).is_err());
    }

    #[test]
    fn test_execution_verdict_follows_the_threshold() {
        let expert = [0u8, 1, 0, 1, 0, 1, 0, 1];
        let (js, v) = evaluate_test_execution(&expert, &expert, 0.01).unwrap();
        assert!(js < 1e-6);
        assert_eq!(v, Verdict::Success);
        let off = [4u8, 4, 4, 4, 4, 4, 4, 4];
        let (js, v) = evaluate_test_execution(&off, &expert, 0.01).unwrap();
        assert!(js > 0.01);
        assert_eq!(v, Verdict::Failed);
        assert!(evaluate_test_execution(&[], &expert, 0.01).is_err());
    }

    #[test]
    fn empty_corpus_split_is_rejected() {
        let cfg = small_cfg(0.5);
        assert!(matches!(
            train_imitation(&[], None, None, &cfg),
            Err(PpgtaError::Contract(_))
        ));
    }
}
