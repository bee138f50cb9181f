//! End-to-end pipeline stages shared by the CLI and the integration suite:
//! world generation, demonstration collection, detector/encoder/policy
//! training, evaluation, and map rendering.

use rand::Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::distill::{attach_boxes, build_invdyn_dataset, train_encoder, InvDynModel};
use crate::imitation::{train_imitation, IlResult};
use crate::metrics::{aggregate_metrics, MetricsSummary};
use crate::policy::{FrameWindow, PolicyNet};
use crate::ppo::{explore_and_test, save_reports, AgentMode, EpisodeReport, EvalSetup};
use crate::tensor::checkpoint;
use crate::tensor::divergence::{js_divergence, smoothed_histogram};
use crate::trajectory::{load_corpus, save_corpus, ExpertKind, Split, Trajectory};
use crate::vision::{average_precision, BoundingBox, FewShotDetector, OracleDetector};
use crate::world::expert::{orbit_expert, path_follow_expert, ring_tiles};
use crate::world::render::{render, render_birdseye, heading_towards, TestStatus};
use crate::world::{generate_world, step, AgentPose, World};
use crate::{PpgtaError, Result, N_ACTIONS};

/// Well-known artifact locations under the output directory.
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: PathBuf) -> Self {
        Artifacts { dir }
    }

    pub fn world_dump(&self) -> PathBuf {
        self.dir.join("world.txt")
    }

    pub fn demos_dir(&self) -> PathBuf {
        self.dir.join("demos")
    }

    pub fn detector(&self) -> PathBuf {
        self.dir.join("detector.txt")
    }

    pub fn detector_ap(&self) -> PathBuf {
        self.dir.join("detector_ap.csv")
    }

    pub fn fe_checkpoint(&self) -> PathBuf {
        self.dir.join("fe.ppgt")
    }

    pub fn il_checkpoint(&self, kind: ExpertKind) -> PathBuf {
        self.dir.join(format!("il_{}.ppgt", kind_slug(kind)))
    }

    pub fn il_meta(&self, kind: ExpertKind) -> PathBuf {
        self.dir.join(format!("il_{}.meta", kind_slug(kind)))
    }

    pub fn reports(&self, agent: &str) -> PathBuf {
        self.dir.join(format!("reports_{agent}.txt"))
    }

    pub fn metrics(&self, agent: &str) -> PathBuf {
        self.dir.join(format!("metrics_{agent}.csv"))
    }

    pub fn series(&self, agent: &str) -> PathBuf {
        self.dir.join(format!("series_{agent}.csv"))
    }

    pub fn map(&self, agent: &str) -> PathBuf {
        self.dir.join(format!("map_{agent}.ppm"))
    }
}

fn kind_slug(kind: ExpertKind) -> &'static str {
    match kind {
        ExpertKind::PathFollow => "path",
        ExpertKind::OrbitTest => "orbit",
    }
}

pub fn agent_slug(mode: AgentMode) -> String {
    match mode {
        AgentMode::Preference => "preference".into(),
        AgentMode::FixedAlpha(a) if a == 0.0 => "pure-novelty".into(),
        AgentMode::FixedAlpha(a) => format!("alpha-{a}"),
        AgentMode::Random => "random".into(),
    }
}

pub fn generate_and_dump(cfg: &RunConfig) -> Result<World> {
    let art = Artifacts::new(cfg.out_dir());
    std::fs::create_dir_all(&art.dir)?;
    let world = generate_world(&cfg.world_spec())?;
    let tmp = art.world_dump().with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        world.write_dump(&mut w)?;
    }
    std::fs::rename(tmp, art.world_dump())?;
    Ok(world)
}

/// Scripted demonstrations: orbit tests around reachable OOIs plus pathway
/// wall-follow runs, persisted as a corpus with split assignment.
pub fn collect_demos(cfg: &RunConfig, world: &World) -> Result<Vec<Trajectory>> {
    let mut rng = crate::rng::stream(cfg.demos_seed, "demos");
    let reachable: Vec<u32> = world
        .oois
        .iter()
        .filter(|o| o.reachable)
        .map(|o| o.id)
        .collect();
    if reachable.is_empty() {
        return Err(PpgtaError::InfeasibleSpec("no reachable OOIs to demonstrate on".into()));
    }
    let path_tiles = world.path_tiles();

    let mut trajectories = Vec::new();
    let mut attempts = 0usize;
    while trajectories.len() < cfg.demos_orbit && attempts < cfg.demos_orbit * 4 {
        let ooi = reachable[attempts % reachable.len()];
        let start_ring = rng.gen_range(0..8);
        let seed = rng.gen::<u64>();
        attempts += 1;
        match orbit_expert(world, ooi, start_ring, seed) {
            Ok(t) if t.steps.len() >= 2 => trajectories.push(t),
            Ok(_) => {}
            Err(PpgtaError::UntestableOoi(_)) => {}
            Err(e) => return Err(e),
        }
    }
    for _ in 0..cfg.demos_path {
        let tile = path_tiles[rng.gen_range(0..path_tiles.len())];
        let heading = rng.gen_range(0..4u8) * 2;
        let seed = rng.gen::<u64>();
        let start = AgentPose::at_tile(tile.0, tile.1, heading);
        trajectories.push(path_follow_expert(world, start, cfg.demos_path_steps, seed)?);
    }

    let art = Artifacts::new(cfg.out_dir());
    save_corpus(&art.demos_dir(), &trajectories)?;
    Ok(trajectories)
}

/// Labeled views of OOIs for detector training and a held-out set for its
/// AP evaluation.
fn detector_samples(
    world: &World,
    count: usize,
    seed: u64,
    label: &str,
) -> Vec<(crate::world::Frame, Vec<BoundingBox>)> {
    let mut rng = crate::rng::stream(seed, label);
    let oracle = OracleDetector { world };
    let mut samples = Vec::new();
    let mut i = 0usize;
    let mut guard = 0usize;
    while samples.len() < count && guard < count * 20 {
        guard += 1;
        let ooi = &world.oois[i % world.oois.len()];
        i += 1;
        let ring = ring_tiles(ooi.tile);
        let options: Vec<(i32, i32)> = ring
            .iter()
            .copied()
            .filter(|t| world.walkable(*t))
            .collect();
        if options.is_empty() {
            continue;
        }
        let tile = options[rng.gen_range(0..options.len())];
        let pose = AgentPose::at_tile(tile.0, tile.1, heading_towards(tile, ooi.tile));
        let boxes = oracle.detect(&pose);
        if boxes.is_empty() {
            continue;
        }
        let (frame, _) = crate::world::render::render_with_owners(world, &pose);
        samples.push((frame, boxes));
    }
    samples
}

pub fn train_detector(cfg: &RunConfig, world: &World) -> Result<(FewShotDetector, BTreeMap<u8, f64>)> {
    let train_set = detector_samples(world, cfg.detector_shots, cfg.demos_seed, "detector.train");
    if train_set.is_empty() {
        return Err(PpgtaError::InfeasibleSpec("no OOI views available for detector".into()));
    }
    let mut det = FewShotDetector::new();
    det.train(&train_set);

    // held-out evaluation views
    let eval_set = detector_samples(world, cfg.detector_shots * 2, cfg.demos_seed, "detector.eval");
    let mut dets: Vec<(u64, BoundingBox)> = Vec::new();
    let mut gt: Vec<(u64, BoundingBox)> = Vec::new();
    for (fid, (frame, boxes)) in eval_set.iter().enumerate() {
        for b in boxes {
            gt.push((fid as u64, *b));
        }
        for b in det.detect(frame)? {
            dets.push((fid as u64, b));
        }
    }
    let ap = average_precision(&dets, &gt, cfg.detector_iou);

    let art = Artifacts::new(cfg.out_dir());
    std::fs::create_dir_all(&art.dir)?;
    det.save(&art.detector())?;
    let mut csv = String::from("type,ap\n");
    for (ty, v) in &ap {
        csv.push_str(&format!("{ty},{v:.6}\n"));
    }
    std::fs::write(art.detector_ap(), csv)?;
    Ok((det, ap))
}

pub fn load_detector(cfg: &RunConfig) -> Result<FewShotDetector> {
    FewShotDetector::load(&Artifacts::new(cfg.out_dir()).detector())
}

pub fn load_demos(cfg: &RunConfig) -> Result<Vec<(Trajectory, Split)>> {
    load_corpus(&Artifacts::new(cfg.out_dir()).demos_dir())
}

/// Trains the masked inverse-dynamics encoder on the full corpus and saves
/// its parameter bank.
pub fn train_fe(cfg: &RunConfig) -> Result<InvDynModel> {
    let corpus = load_demos(cfg)?;
    let detector = load_detector(cfg)?;
    let trajectories: Vec<Trajectory> = corpus.into_iter().map(|(t, _)| t).collect();
    let mut ds = build_invdyn_dataset(&trajectories);
    attach_boxes(&mut ds, &detector);
    let pcfg = cfg.policy_config();
    let model = train_encoder(&ds, &cfg.fe_config(), pcfg.frame_h, pcfg.frame_w, pcfg.embed_dim)?;
    checkpoint::save(&model.bank, &Artifacts::new(cfg.out_dir()).fe_checkpoint())?;
    Ok(model)
}

/// Trains one imitation policy per expert kind, warm-starting the encoder
/// from the distilled feature extractor, and saves checkpoints plus
/// thresholds.
pub fn train_il(cfg: &RunConfig, kind: ExpertKind) -> Result<IlResult> {
    let art = Artifacts::new(cfg.out_dir());
    let corpus: Vec<(Trajectory, Split)> = load_demos(cfg)?
        .into_iter()
        .filter(|(t, _)| t.kind == kind)
        .collect();
    let detector = load_detector(cfg)?;
    let fe_bank = load_fe_bank(cfg)?;
    let mut result = train_imitation(&corpus, Some(&detector), Some(&fe_bank), &cfg.il_config())?;
    // calibrate the success threshold on live rollouts so it reflects the
    // same statistic the handoff verdict uses (rollout vs pooled expert)
    let world = load_world(cfg)?;
    if let Some(t) = rollout_threshold(cfg, &world, &result.student, &corpus)? {
        result.success_threshold = t;
    }
    checkpoint::save(&result.student.bank, &art.il_checkpoint(kind))?;
    let meta = format!(
        "success_threshold={}\nval_loss={}\n",
        result.success_threshold, result.val_loss
    );
    std::fs::write(art.il_meta(kind), meta)?;
    Ok(result)
}

/// Recovers a demonstration's start pose by matching its first recorded
/// frame against the candidate poses its expert could have started from
/// (OOI ring tiles facing the object for orbit runs, pathway tiles on
/// cardinal headings for path runs).
pub fn find_start_pose(world: &World, traj: &Trajectory) -> Option<AgentPose> {
    let first = &traj.steps.first()?.0;
    let candidates: Vec<AgentPose> = match traj.kind {
        ExpertKind::OrbitTest => world
            .oois
            .iter()
            .flat_map(|o| {
                ring_tiles(o.tile)
                    .into_iter()
                    .filter(|t| world.walkable(*t))
                    .map(|t| AgentPose::at_tile(t.0, t.1, heading_towards(t, o.tile)))
                    .collect::<Vec<_>>()
            })
            .collect(),
        ExpertKind::PathFollow => world
            .path_tiles()
            .into_iter()
            .flat_map(|t| (0..4u8).map(move |h| AgentPose::at_tile(t.0, t.1, h * 2)))
            .collect(),
    };
    candidates
        .into_iter()
        .find(|p| render(world, p).pixels == first.pixels)
}

/// Rolls a policy out in the simulator with oracle-masked frames, mirroring
/// the handoff loop. Returns the executed actions and the tiles visited.
pub fn rollout_policy(
    world: &World,
    policy: &PolicyNet,
    start: AgentPose,
    n_steps: usize,
    greedy: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Vec<u8>, Vec<(i32, i32)>)> {
    use rand::distributions::{Distribution, WeightedIndex};
    let oracle = OracleDetector { world };
    let mut window = FrameWindow::new(policy.cfg.k_window);
    let mut g = policy.zero_global_state();
    let mut pose = start;
    let mut actions = Vec::with_capacity(n_steps);
    let mut tiles = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let frame = render(world, &pose);
        let boxes = oracle.detect(&pose);
        let masked = match boxes.iter().max_by_key(|b| b.area()) {
            Some(b) => crate::vision::od_mask(&frame, b),
            None => frame,
        };
        window.push(masked);
        let (probs, _, g_next) = policy.infer(window.frames(), &g)?;
        g = g_next;
        let action = if greedy {
            probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i as u8)
                .unwrap()
        } else {
            WeightedIndex::new(&probs)
                .map_err(|_| PpgtaError::Diverged("degenerate action distribution".into()))?
                .sample(rng) as u8
        };
        actions.push(action);
        pose = step(world, &pose, action)?.0;
        tiles.push(pose.tile());
    }
    Ok((actions, tiles))
}

/// Mean JS divergence between live student rollouts from validation-split
/// starts and the pooled expert action histogram for this corpus. `None`
/// when no validation start pose can be recovered.
fn rollout_threshold(
    cfg: &RunConfig,
    world: &World,
    student: &PolicyNet,
    corpus: &[(Trajectory, Split)],
) -> Result<Option<f32>> {
    let pooled: Vec<u8> = corpus.iter().flat_map(|(t, _)| t.actions()).collect();
    let q = smoothed_histogram(&pooled, N_ACTIONS);
    let mut rng = crate::rng::stream(cfg.il_seed, "il.threshold.rollout");
    let mut scores = Vec::new();
    for (traj, split) in corpus {
        if *split != Split::Val || traj.steps.len() < 2 {
            continue;
        }
        let Some(pose) = find_start_pose(world, traj) else { continue };
        let (actions, _) =
            rollout_policy(world, student, pose, traj.steps.len(), false, &mut rng)?;
        let p = smoothed_histogram(&actions, N_ACTIONS);
        scores.push(js_divergence(&p, &q)? as f64);
    }
    if scores.is_empty() {
        return Ok(None);
    }
    Ok(Some((scores.iter().sum::<f64>() / scores.len() as f64) as f32))
}

fn load_fe_bank(cfg: &RunConfig) -> Result<crate::tensor::nn::ParamBank> {
    let path = Artifacts::new(cfg.out_dir()).fe_checkpoint();
    let mut bank = crate::tensor::nn::ParamBank::new();
    for (name, tensor) in checkpoint::load_records(&path)? {
        bank.add(&name, tensor);
    }
    Ok(bank)
}

pub fn load_policy(cfg: &RunConfig, kind: ExpertKind) -> Result<PolicyNet> {
    let art = Artifacts::new(cfg.out_dir());
    let mut shape_rng = crate::rng::stream(0, "policy.shape");
    let mut net = PolicyNet::new(&mut shape_rng, cfg.policy_config());
    checkpoint::load_into(&mut net.bank, &art.il_checkpoint(kind))?;
    Ok(net)
}

pub fn load_il_meta(cfg: &RunConfig, kind: ExpertKind) -> Result<BTreeMap<String, f32>> {
    let path = Artifacts::new(cfg.out_dir()).il_meta(kind);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| PpgtaError::MissingArtifact(path.display().to_string()))?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            let v: f32 = v.trim().parse().map_err(|_| PpgtaError::CorruptFile {
                path: path.display().to_string(),
                reason: format!("bad value for {k}"),
            })?;
            out.insert(k.trim().to_string(), v);
        }
    }
    Ok(out)
}

/// 1.5x the median orbit demonstration length.
pub fn handoff_budget(orbit_lengths: &mut Vec<usize>) -> usize {
    orbit_lengths.sort_unstable();
    let median = if orbit_lengths.is_empty() {
        0
    } else {
        orbit_lengths[orbit_lengths.len() / 2]
    };
    (median as f32 * 1.5).round() as usize
}

/// Full evaluation for one agent mode; writes reports, metrics, series, and
/// the birds-eye map.
pub fn evaluate(cfg: &RunConfig, world: &World, mode: AgentMode) -> Result<(Vec<EpisodeReport>, MetricsSummary)> {
    let art = Artifacts::new(cfg.out_dir());
    let path_policy = load_policy(cfg, ExpertKind::PathFollow)?;
    let test_policy = load_policy(cfg, ExpertKind::OrbitTest)?;
    let meta = load_il_meta(cfg, ExpertKind::OrbitTest)?;
    let success_threshold = *meta
        .get("success_threshold")
        .ok_or_else(|| PpgtaError::MissingArtifact("success_threshold in orbit meta".into()))?;

    let orbit: Vec<Trajectory> = load_demos(cfg)?
        .into_iter()
        .filter(|(t, _)| t.kind == ExpertKind::OrbitTest)
        .map(|(t, _)| t)
        .collect();
    let expert_actions: Vec<u8> = orbit.iter().flat_map(|t| t.actions()).collect();
    let mut lengths: Vec<usize> = orbit.iter().map(|t| t.steps.len()).collect();
    let budget = handoff_budget(&mut lengths);

    let setup = EvalSetup {
        world,
        path_policy: &path_policy,
        test_policy: &test_policy,
        success_threshold,
        expert_actions: &expert_actions,
        handoff_budget: budget.max(1),
    };
    let reports = explore_and_test(&setup, &cfg.ppo_config(), mode)?;
    let summary = aggregate_metrics(&reports, world)?;

    let slug = agent_slug(mode);
    save_reports(&reports, &art.reports(&slug))?;
    summary.write_csv(&art.metrics(&slug))?;
    summary.write_series_csv(&art.series(&slug))?;
    render_map_for(cfg, world, &reports, &slug)?;
    Ok((reports, summary))
}

/// Birds-eye coverage and test-status map for a finished run.
pub fn render_map_for(
    cfg: &RunConfig,
    world: &World,
    reports: &[EpisodeReport],
    slug: &str,
) -> Result<PathBuf> {
    let art = Artifacts::new(cfg.out_dir());
    let traces: Vec<Vec<(i32, i32)>> = reports
        .iter()
        .map(|r| r.visited.iter().copied().collect())
        .collect();
    let mut status: Vec<(u32, TestStatus)> = Vec::new();
    for ooi in &world.oois {
        let verdicts: Vec<_> = reports
            .iter()
            .flat_map(|r| r.tests.iter())
            .filter(|t| t.ooi == ooi.id)
            .collect();
        let s = if verdicts.is_empty() {
            TestStatus::Missed
        } else if verdicts
            .iter()
            .any(|t| t.verdict == crate::imitation::Verdict::Success)
        {
            TestStatus::Success
        } else {
            TestStatus::Failed
        };
        status.push((ooi.id, s));
    }
    let img = render_birdseye(world, &traces, &status, 4);
    let path = art.map(slug);
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        img.write_ppm(&mut w)?;
    }
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Reloads a world from its config (worlds are pure functions of the spec).
pub fn load_world(cfg: &RunConfig) -> Result<World> {
    generate_world(&cfg.world_spec())
}

/// Summary text emitted by the `report` subcommand.
pub fn report_text(cfg: &RunConfig) -> Result<String> {
    let art = Artifacts::new(cfg.out_dir());
    let mut out = String::new();
    for slug in ["preference", "pure-novelty", "random"] {
        let path = art.metrics(slug);
        if let Ok(text) = std::fs::read_to_string(&path) {
            out.push_str(&format!("[{slug}]\n{text}\n"));
        }
    }
    if out.is_empty() {
        return Err(PpgtaError::MissingArtifact(
            "no metrics CSVs under the output directory".into(),
        ));
    }
    Ok(out)
}

pub fn detector_ap_path(cfg: &RunConfig) -> PathBuf {
    Artifacts::new(cfg.out_dir()).detector_ap()
}

pub fn ensure_artifact(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PpgtaError::MissingArtifact(path.display().to_string()))
    }
}
