//! PPO exploration agent: actor-critic over the policy trunk, combined
//! style/novelty reward, GAE, clipped-surrogate updates, and the
//! evaluation protocol with OOI-triggered handoff to the imitation test
//! policy.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use std::collections::BTreeSet;
use std::io::{BufRead, Write as IoWrite};
use std::path::Path;
use std::sync::Arc;

use crate::imitation::{evaluate_test_execution, Verdict};
use crate::novelty::{
    intrinsic_reward, preprocess, train_predictors, PredictorEnsemble, ReplayBuffer, RndTarget,
    RunningStd, ENSEMBLE_SIZE, REPLAY_CAPACITY,
};
use crate::policy::{Mode, PolicyConfig, PolicyNet};
use crate::preference::{combined_reward, AlphaController, AlphaParams, StyleContext};
use crate::tensor::nn::{Dense, ParamBank};
use crate::tensor::optim::{AdamW, LrSchedule};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;
use crate::vision::{BoundingBox, OracleDetector};
use crate::world::render::render;
use crate::world::{step, AgentPose, World};
use crate::{PpgtaError, Result, N_ACTIONS};

#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub clip: f32,
    pub update_epochs: usize,
    pub gae_lambda: f32,
    pub gamma: f32,
    pub entropy_coef: f32,
    pub value_coef: f32,
    pub lr: f32,
    pub horizon: usize,
    pub episodes: usize,
    pub novelty_update_every: usize,
    pub novelty_batch: usize,
    pub normalize_novelty: bool,
    pub trigger_area_frac: f32,
    pub alpha: AlphaParams,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            update_epochs: 4,
            gae_lambda: 0.95,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 3e-4,
            horizon: 300,
            episodes: 45,
            novelty_update_every: 1,
            novelty_batch: 4,
            normalize_novelty: true,
            trigger_area_frac: 0.04,
            alpha: AlphaParams::default(),
            seed: 0,
        }
    }
}

/// How the mixing coefficient and the action source behave during
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentMode {
    /// Adaptive alpha (the full agent).
    Preference,
    /// Alpha pinned; 0.0 gives the pure-novelty ablation, 1.0 pure style.
    FixedAlpha(f32),
    /// Uniform random actions; no learning.
    Random,
}

/// Policy trunk shared between the action head (inside `PolicyNet`) and a
/// scalar value head.
pub struct ActorCritic {
    pub net: PolicyNet,
    value: Dense,
}

impl ActorCritic {
    pub fn new(seed: u64, cfg: PolicyConfig) -> Self {
        let mut rng = crate::rng::stream(seed, "ppo.init");
        let mut net = PolicyNet::new(&mut rng, cfg);
        let value = Dense::new(&mut net.bank, &mut rng, "value.fc", 32, 1);
        ActorCritic { net, value }
    }

    /// Copies every identically named parameter from a trained policy bank
    /// (the value head keeps its fresh init).
    pub fn warm_start(&mut self, source: &ParamBank) {
        self.net.bank.copy_overlapping_from(source);
    }

    /// Inference over a cached-embedding window: action probabilities,
    /// value estimate, next global state.
    pub fn act(
        &self,
        embeds: &[Tensor],
        global_state: &Tensor,
    ) -> Result<(Vec<f32>, f32, Tensor)> {
        let mut tape = Tape::new();
        let out = self
            .net
            .forward_cached(&mut tape, embeds, global_state, &mut Mode::Infer)?;
        let v = self.value.forward(&mut tape, &self.net.bank, out.trunk);
        let probs = crate::tensor::tape::softmax(&tape.value(out.logits).data);
        let value = tape.scalar_value(v);
        let g = tape.value(out.new_global).clone();
        Ok((probs, value, g))
    }
}

/// One collected episode, ready for a PPO update.
pub struct RolloutBatch {
    pub embeds: Vec<Tensor>,
    pub actions: Vec<u8>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
    pub k_window: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn window_at(&self, t: usize) -> Vec<Tensor> {
        let lo = t.saturating_sub(self.k_window - 1);
        let mut w: Vec<Tensor> = self.embeds[lo..=t].to_vec();
        while w.len() < self.k_window {
            w.insert(0, self.embeds[lo].clone());
        }
        w
    }
}

/// Generalized advantage estimation over a single terminal episode.
pub fn compute_gae(
    rewards: &[f32],
    values: &[f32],
    gamma: f32,
    lambda: f32,
) -> (Vec<f32>, Vec<f32>) {
    let n = rewards.len();
    let mut advantages = vec![0.0f32; n];
    let mut gae = 0.0f32;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        gae = delta + gamma * lambda * gae;
        advantages[t] = gae;
    }
    let returns: Vec<f32> = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Clipped-surrogate PPO update over the full episode sequence, one
/// optimizer step per epoch.
pub fn ppo_update(
    ac: &mut ActorCritic,
    opt: &mut AdamW,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
) -> Result<()> {
    if batch.is_empty() {
        return Err(PpgtaError::Contract("empty rollout batch".into()));
    }
    let n = batch.len();
    let mean = batch.advantages.iter().sum::<f32>() / n as f32;
    let var = batch
        .advantages
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f32>()
        / n as f32;
    let std = var.sqrt() + 1e-8;
    let norm_adv: Vec<f32> = batch.advantages.iter().map(|a| (a - mean) / std).collect();

    for _epoch in 0..cfg.update_epochs {
        let mut g = ac.net.zero_global_state();
        for t in 0..n {
            let window = batch.window_at(t);
            let mut tape = Tape::new();
            let out = ac
                .net
                .forward_cached(&mut tape, &window, &g, &mut Mode::Infer)?;
            let v = ac.value.forward(&mut tape, &ac.net.bank, out.trunk);
            let lp = tape.log_prob(out.logits, batch.actions[t] as usize);
            let lp_diff = tape.affine(lp, 1.0, -batch.log_probs[t]);
            let ratio = tape.exp(lp_diff);
            if !tape.scalar_value(ratio).is_finite() {
                return Err(PpgtaError::Diverged("PPO probability ratio is NaN".into()));
            }
            let adv = norm_adv[t];
            let surr1 = tape.affine(ratio, adv, 0.0);
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
            let surr2 = tape.affine(clipped, adv, 0.0);
            let surr = tape.min_pair(surr1, surr2);
            let policy_loss = tape.affine(surr, -1.0, 0.0);
            let vmse = tape.mse_to(v, Arc::new(vec![batch.returns[t]]));
            let value_loss = tape.affine(vmse, cfg.value_coef, 0.0);
            let ent = tape.entropy(out.logits);
            let ent_bonus = tape.affine(ent, -cfg.entropy_coef, 0.0);
            let partial = tape.add(policy_loss, value_loss);
            let loss = tape.add(partial, ent_bonus);
            tape.backward(loss);
            g = tape.value(out.new_global).clone();
            tape.accumulate_into(&mut ac.net.bank);
        }
        ac.net.bank.scale_grads(1.0 / n as f32);
        opt.step(&mut ac.net.bank)?;
    }
    Ok(())
}

/// Online novelty-reward state carried across an evaluation run.
pub struct NoveltyStack {
    pub target: RndTarget,
    pub ensemble: PredictorEnsemble,
    pub buffer: ReplayBuffer,
    pub normalizer: RunningStd,
    rng: rand_chacha::ChaCha8Rng,
    observed: usize,
}

impl NoveltyStack {
    pub fn new(seed: u64, normalize: bool) -> Self {
        NoveltyStack {
            target: RndTarget::new(seed),
            ensemble: PredictorEnsemble::new(seed, ENSEMBLE_SIZE),
            buffer: ReplayBuffer::new(REPLAY_CAPACITY),
            normalizer: RunningStd::new(normalize),
            rng: crate::rng::stream(seed, "novelty.order"),
            observed: 0,
        }
    }

    /// Scores a frame, feeds the buffer, and trains the predictors on the
    /// configured cadence. Returns (raw, normalized) r^e.
    pub fn observe(
        &mut self,
        frame: &crate::world::Frame,
        detections: &[BoundingBox],
        train: bool,
        cfg: &PpoConfig,
    ) -> Result<(f32, f32)> {
        let pre = preprocess(frame, detections);
        let raw = intrinsic_reward(&self.ensemble, &pre);
        self.buffer.push(pre);
        self.observed += 1;
        if train && self.observed % cfg.novelty_update_every == 0 {
            let batch = cfg.novelty_batch.min(self.buffer.len());
            train_predictors(
                &mut self.ensemble,
                &self.target,
                &self.buffer,
                1,
                batch,
                &mut self.rng,
            )?;
        }
        let norm = self.normalizer.normalize(raw);
        Ok((raw, norm))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub t: usize,
    pub re: f32,
    pub rp: f32,
    pub alpha: f32,
    pub rc: f32,
}

#[derive(Debug, Clone, Copy)]
pub struct TestRecord {
    pub ooi: u32,
    pub js: f32,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub episode: usize,
    pub spawn: (i32, i32),
    pub visited: BTreeSet<(i32, i32)>,
    pub tests: Vec<TestRecord>,
    pub steps: Vec<StepLog>,
}

/// Everything frozen that the evaluation protocol needs.
pub struct EvalSetup<'a> {
    pub world: &'a World,
    /// Frozen path-following policy (style target and warm start).
    pub path_policy: &'a PolicyNet,
    /// Frozen orbit-test imitation policy.
    pub test_policy: &'a PolicyNet,
    pub success_threshold: f32,
    /// Pooled expert orbit actions for the JS comparison.
    pub expert_actions: &'a [u8],
    /// Handoff length: 1.5x the median expert orbit length.
    pub handoff_budget: usize,
}

fn mask_with_largest(frame: &crate::world::Frame, boxes: &[BoundingBox]) -> crate::world::Frame {
    match boxes.iter().max_by_key(|b| b.area()) {
        Some(b) => crate::vision::od_mask(frame, b),
        None => frame.clone(),
    }
}

fn sample_action(probs: &[f32], rng: &mut rand_chacha::ChaCha8Rng) -> Result<u8> {
    let dist = WeightedIndex::new(probs)
        .map_err(|_| PpgtaError::Diverged("degenerate action distribution".into()))?;
    Ok(dist.sample(rng) as u8)
}

/// Sliding window of cached embeddings, padded with the first entry.
struct EmbedWindow {
    k: usize,
    embeds: Vec<Tensor>,
}

impl EmbedWindow {
    fn new(k: usize) -> Self {
        EmbedWindow { k, embeds: Vec::new() }
    }

    fn push(&mut self, e: Tensor) {
        if self.embeds.is_empty() {
            self.embeds = vec![e; self.k];
        } else {
            self.embeds.remove(0);
            self.embeds.push(e);
        }
    }
}

/// Runs the full evaluation protocol and returns one report per episode.
/// The actor keeps learning online between episodes unless the mode is
/// `Random`.
pub fn explore_and_test(
    setup: &EvalSetup,
    cfg: &PpoConfig,
    mode: AgentMode,
) -> Result<Vec<EpisodeReport>> {
    let pcfg = setup.path_policy.cfg.clone();
    let k = pcfg.k_window;
    let mut ac = ActorCritic::new(cfg.seed, pcfg.clone());
    ac.warm_start(&setup.path_policy.bank);
    let mut opt = AdamW::new(&ac.net.bank, LrSchedule::Constant(cfg.lr), 0.0);
    let mut novelty = NoveltyStack::new(cfg.seed, cfg.normalize_novelty);
    let mut alpha_ctrl = AlphaController::with(cfg.alpha);
    let mut action_rng = crate::rng::stream(cfg.seed, "eval.actions");
    let oracle = OracleDetector { world: setup.world };
    let frame_area = (pcfg.frame_w * pcfg.frame_h) as f32;

    let path_tiles = setup.world.path_tiles();
    let mut tested: BTreeSet<u32> = BTreeSet::new();
    let mut reports = Vec::with_capacity(cfg.episodes);

    // every episode restarts from the park entrance — the pathway tile
    // nearest the southwest corner — so exploration range is attributable
    // to the agent rather than to respawn teleports
    let s = setup.world.size();
    let spawn = *path_tiles
        .iter()
        .min_by_key(|t| (t.0.max(s - 1 - t.1), t.0, t.1))
        .expect("world has pathway tiles");
    let heading = 2u8; // facing north, up the promenade

    for episode in 0..cfg.episodes {
        let mut pose = AgentPose::at_tile(spawn.0, spawn.1, heading);
        let mut report = EpisodeReport {
            episode,
            spawn,
            visited: BTreeSet::new(),
            tests: Vec::new(),
            steps: Vec::new(),
        };
        report.visited.insert(spawn);

        let mut style = StyleContext::new(N_ACTIONS);
        let mut window = EmbedWindow::new(k);
        let mut g_actor = ac.net.zero_global_state();
        let mut g_path = setup.path_policy.zero_global_state();
        let mut batch = RolloutBatch {
            embeds: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
            k_window: k,
        };

        let mut t = 0usize;
        while t < cfg.horizon {
            let frame = render(setup.world, &pose);
            let dets = oracle.detect_with_ids(&pose);
            let boxes: Vec<BoundingBox> = dets.iter().map(|(_, b)| *b).collect();

            // OOI trigger: big enough, not yet tested this run. Unreachable
            // OOIs never trigger, so they stay untested and count as misses.
            let trigger = dets
                .iter()
                .filter(|(id, b)| {
                    !tested.contains(id)
                        && setup.world.oois[*id as usize].reachable
                        && b.area() as f32 >= cfg.trigger_area_frac * frame_area
                })
                .max_by_key(|(_, b)| b.area())
                .map(|(id, _)| *id);
            if let Some(ooi_id) = trigger {
                let (js, verdict, end_pose) = run_handoff(
                    setup,
                    pose,
                    &mut action_rng,
                    &mut report.visited,
                )?;
                tested.insert(ooi_id);
                report.tests.push(TestRecord { ooi: ooi_id, js, verdict });
                pose = end_pose;
                // exploration window restarts from the post-test view
                window = EmbedWindow::new(k);
                t += 1;
                continue;
            }

            let (re_raw, re) =
                novelty.observe(&frame, &boxes, mode != AgentMode::Random, cfg)?;
            let _ = re_raw;
            let masked = mask_with_largest(&frame, &boxes);
            let embed = ac.net.embed_frame(&masked);
            window.push(embed.clone());

            let (probs_e, value, g_actor_next) = ac.act(&window.embeds, &g_actor)?;
            g_actor = g_actor_next;
            let mut ptape = Tape::new();
            let pout = setup.path_policy.forward_cached(
                &mut ptape,
                &window.embeds,
                &g_path,
                &mut Mode::Infer,
            )?;
            let probs_p = crate::tensor::tape::softmax(&ptape.value(pout.logits).data);
            g_path = ptape.value(pout.new_global).clone();

            let rp = style.style_reward(&probs_e, &probs_p)?;
            let alpha = match mode {
                AgentMode::Preference => alpha_ctrl.update(re),
                AgentMode::FixedAlpha(a) => {
                    alpha_ctrl.update(re);
                    a
                }
                AgentMode::Random => {
                    alpha_ctrl.update(re);
                    0.0
                }
            };
            let rc = combined_reward(alpha, rp, re);
            report.steps.push(StepLog { t, re, rp, alpha, rc });

            let action = match mode {
                AgentMode::Random => action_rng.gen_range(0..N_ACTIONS) as u8,
                _ => sample_action(&probs_e, &mut action_rng)?,
            };
            batch.embeds.push(embed);
            batch.actions.push(action);
            batch.log_probs.push(probs_e[action as usize].max(1e-30).ln());
            batch.values.push(value);
            batch.rewards.push(rc);

            let (next_pose, _) = step(setup.world, &pose, action)?;
            pose = next_pose;
            report.visited.insert(pose.tile());
            t += 1;
        }

        if mode != AgentMode::Random && !batch.is_empty() {
            let (adv, ret) =
                compute_gae(&batch.rewards, &batch.values, cfg.gamma, cfg.gae_lambda);
            batch.advantages = adv;
            batch.returns = ret;
            ppo_update(&mut ac, &mut opt, &batch, cfg)?;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Hands control to the imitation test policy for the fixed budget and
/// scores the executed behavior. Exploration reward accrual is paused.
fn run_handoff(
    setup: &EvalSetup,
    start: AgentPose,
    rng: &mut rand_chacha::ChaCha8Rng,
    visited: &mut BTreeSet<(i32, i32)>,
) -> Result<(f32, Verdict, AgentPose)> {
    let k = setup.test_policy.cfg.k_window;
    let oracle = OracleDetector { world: setup.world };
    let mut pose = start;
    let mut window = crate::policy::FrameWindow::new(k);
    let mut g = setup.test_policy.zero_global_state();
    let mut actions = Vec::with_capacity(setup.handoff_budget);
    for _ in 0..setup.handoff_budget {
        let frame = render(setup.world, &pose);
        let boxes = oracle.detect(&pose);
        window.push(mask_with_largest(&frame, &boxes));
        let (probs, _, g_next) = setup.test_policy.infer(window.frames(), &g)?;
        g = g_next;
        let action = sample_action(&probs, rng)?;
        actions.push(action);
        let (next_pose, _) = step(setup.world, &pose, action)?;
        pose = next_pose;
        visited.insert(pose.tile());
    }
    let (js, verdict) =
        evaluate_test_execution(&actions, setup.expert_actions, setup.success_threshold)?;
    Ok((js, verdict, pose))
}

// ---------------------------------------------------------------------------
// Report persistence
// ---------------------------------------------------------------------------

/// Encodes the visited set as vertical runs `x,y+len` over sorted order.
fn rle_visited(visited: &BTreeSet<(i32, i32)>) -> Vec<(i32, i32, usize)> {
    let mut runs: Vec<(i32, i32, usize)> = Vec::new();
    for &(x, y) in visited {
        match runs.last_mut() {
            Some(r) if r.0 == x && r.1 + r.2 as i32 == y => r.2 += 1,
            _ => runs.push((x, y, 1)),
        }
    }
    runs
}

pub fn save_reports(reports: &[EpisodeReport], path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for r in reports {
            writeln!(w, "episode {}", r.episode)?;
            writeln!(w, "spawn {} {}", r.spawn.0, r.spawn.1)?;
            let runs: Vec<String> = rle_visited(&r.visited)
                .iter()
                .map(|(x, y, n)| format!("{x},{y}+{n}"))
                .collect();
            writeln!(w, "visited {}", runs.join(" "))?;
            for tr in &r.tests {
                let v = match tr.verdict {
                    Verdict::Success => "success",
                    Verdict::Failed => "failed",
                };
                writeln!(w, "test {} {} {:.6}", tr.ooi, v, tr.js)?;
            }
            for s in &r.steps {
                writeln!(
                    w,
                    "step {} {:.6} {:.6} {:.6} {:.6}",
                    s.t, s.re, s.rp, s.alpha, s.rc
                )?;
            }
            writeln!(w, "end")?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_reports(path: &Path) -> Result<Vec<EpisodeReport>> {
    let corrupt = |reason: String| PpgtaError::CorruptFile {
        path: path.display().to_string(),
        reason,
    };
    let file = std::fs::File::open(path)
        .map_err(|_| PpgtaError::MissingArtifact(path.display().to_string()))?;
    let mut reports = Vec::new();
    let mut current: Option<EpisodeReport> = None;
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("episode") => {
                let id: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| corrupt("bad episode line".into()))?;
                current = Some(EpisodeReport {
                    episode: id,
                    spawn: (0, 0),
                    visited: BTreeSet::new(),
                    tests: Vec::new(),
                    steps: Vec::new(),
                });
            }
            Some("spawn") => {
                let r = current.as_mut().ok_or_else(|| corrupt("spawn before episode".into()))?;
                let x: i32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| corrupt("bad spawn".into()))?;
                let y: i32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| corrupt("bad spawn".into()))?;
                r.spawn = (x, y);
            }
            Some("visited") => {
                let r = current.as_mut().ok_or_else(|| corrupt("visited before episode".into()))?;
                for run in parts {
                    let (xy, n) = run
                        .split_once('+')
                        .ok_or_else(|| corrupt("bad visited run".into()))?;
                    let (x, y) = xy
                        .split_once(',')
                        .ok_or_else(|| corrupt("bad visited run".into()))?;
                    let x: i32 = x.parse().map_err(|_| corrupt("bad visited run".into()))?;
                    let y: i32 = y.parse().map_err(|_| corrupt("bad visited run".into()))?;
                    let n: usize = n.parse().map_err(|_| corrupt("bad visited run".into()))?;
                    for i in 0..n {
                        r.visited.insert((x, y + i as i32));
                    }
                }
            }
            Some("test") => {
                let r = current.as_mut().ok_or_else(|| corrupt("test before episode".into()))?;
                let ooi: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| corrupt("bad test line".into()))?;
                let verdict = match parts.next() {
                    Some("success") => Verdict::Success,
                    Some("failed") => Verdict::Failed,
                    _ => return Err(corrupt("bad verdict".into())),
                };
                let js: f32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| corrupt("bad test line".into()))?;
                r.tests.push(TestRecord { ooi, js, verdict });
            }
            Some("step") => {
                let r = current.as_mut().ok_or_else(|| corrupt("step before episode".into()))?;
                let nums: Vec<f32> = parts
                    .clone()
                    .skip(1)
                    .map(|v| v.parse().unwrap_or(f32::NAN))
                    .collect();
                let t: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| corrupt("bad step line".into()))?;
                if nums.len() != 4 || nums.iter().any(|v| v.is_nan()) {
                    return Err(corrupt("bad step line".into()));
                }
                r.steps.push(StepLog { t, re: nums[0], rp: nums[1], alpha: nums[2], rc: nums[3] });
            }
            Some("end") => {
                reports.push(current.take().ok_or_else(|| corrupt("end before episode".into()))?);
            }
            Some(other) => return Err(corrupt(format!("unknown record {other}"))),
            None => {}
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(n^2) direct evaluation of the GAE sums.
    fn gae_reference(rewards: &[f32], values: &[f32], gamma: f32, lambda: f32) -> Vec<f32> {
        let n = rewards.len();
        (0..n)
            .map(|t| {
                let mut acc = 0.0f32;
                for l in 0..n - t {
                    let next_v = if t + l + 1 < n { values[t + l + 1] } else { 0.0 };
                    let delta = rewards[t + l] + gamma * next_v - values[t + l];
                    acc += (gamma * lambda).powi(l as i32) * delta;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn gae_matches_direct_summation() {
        let rewards = [1.0f32, -0.5, 0.3, 2.0, 0.0, -1.2];
        let values = [0.4f32, 0.1, -0.3, 1.0, 0.6, 0.2];
        let (adv, ret) = compute_gae(&rewards, &values, 0.99, 0.95);
        let expect = gae_reference(&rewards, &values, 0.99, 0.95);
        for (a, e) in adv.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-5, "{a} vs {e}");
        }
        for ((r, a), v) in ret.iter().zip(&adv).zip(&values) {
            assert!((r - (a + v)).abs() < 1e-6);
        }
    }

    #[test]
    fn gae_with_lambda_zero_is_one_step_td() {
        let rewards = [1.0f32, 2.0, 3.0];
        let values = [0.5f32, 0.2, 0.1];
        let (adv, _) = compute_gae(&rewards, &values, 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * 0.2 - 0.5)).abs() < 1e-6);
        assert!((adv[1] - (2.0 + 0.9 * 0.1 - 0.2)).abs() < 1e-6);
        assert!((adv[2] - (3.0 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn rle_compresses_vertical_runs() {
        let visited: BTreeSet<(i32, i32)> =
            [(1, 3), (1, 4), (1, 5), (1, 7), (2, 0)].into_iter().collect();
        assert_eq!(rle_visited(&visited), vec![(1, 3, 3), (1, 7, 1), (2, 0, 1)]);
    }

    #[test]
    fn reports_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.txt");
        let reports = vec![EpisodeReport {
            episode: 3,
            spawn: (10, 12),
            visited: [(10, 12), (10, 13), (11, 2)].into_iter().collect(),
            tests: vec![
                TestRecord { ooi: 4, js: 0.031, verdict: Verdict::Success },
                TestRecord { ooi: 9, js: 0.5, verdict: Verdict::Failed },
            ],
            steps: vec![
                StepLog { t: 0, re: 0.25, rp: -0.125, alpha: 0.8, rc: -0.05 },
                StepLog { t: 1, re: 0.5, rp: -0.25, alpha: 0.75, rc: -0.0625 },
            ],
        }];
        save_reports(&reports, &path).unwrap();
        let back = load_reports(&path).unwrap();
        assert_eq!(back.len(), 1);
        let r = &back[0];
        assert_eq!(r.episode, 3);
        assert_eq!(r.spawn, (10, 12));
        assert_eq!(r.visited, reports[0].visited);
        assert_eq!(r.tests.len(), 2);
        assert_eq!(r.tests[0].ooi, 4);
        assert!(matches!(r.tests[1].verdict, Verdict::Failed));
        assert_eq!(r.steps.len(), 2);
        assert!((r.steps[1].alpha - 0.75).abs() < 1e-6);
        assert!((r.steps[1].rc - -0.0625).abs() < 1e-6);
    }

    #[test]
    fn malformed_report_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.txt");
        std::fs::write(&path, "step 0 1 2 3 4\n").unwrap();
        assert!(matches!(
            load_reports(&path),
            Err(PpgtaError::CorruptFile { .. })
        ));
    }

    #[test]
    fn empty_rollout_is_rejected() {
        let cfg = PpoConfig::default();
        let pcfg = PolicyConfig {
            frame_h: 8,
            frame_w: 8,
            embed_dim: 16,
            local_hidden: 8,
            global_hidden: 8,
            k_window: 2,
            dropout: 0.0,
        };
        let mut ac = ActorCritic::new(0, pcfg);
        let mut opt = AdamW::new(&ac.net.bank, LrSchedule::Constant(1e-3), 0.0);
        let batch = RolloutBatch {
            embeds: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
            k_window: 2,
        };
        assert!(ppo_update(&mut ac, &mut opt, &batch, &cfg).is_err());
    }
}
