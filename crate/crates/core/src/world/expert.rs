//! Scripted demonstration experts: pathway wall-following and 360-degree
//! orbit testing around an OOI.

use rand::Rng;

use super::render::{heading_towards, render};
use super::{step, AgentPose, TileKind, World, DIRS8};
use crate::error::{PpgtaError, Result};
use crate::rng::stream;
use crate::trajectory::{ExpertKind, Trajectory};

/// Shortest rotation action sequence from `from` to `to` (4 = +45 CCW,
/// 5 = -45).
fn rotations(from: u8, to: u8) -> Vec<u8> {
    let ccw = (to as i32 - from as i32).rem_euclid(8);
    if ccw <= 4 {
        vec![4; ccw as usize]
    } else {
        vec![5; (8 - ccw) as usize]
    }
}

/// Expresses a move in absolute direction `dir_idx` as a translate action
/// relative to `heading`, if one exists.
fn move_action(heading: u8, dir_idx: u8) -> Option<u8> {
    let rel = (dir_idx as i32 - heading as i32).rem_euclid(8);
    match rel {
        0 => Some(0),
        4 => Some(1),
        2 => Some(2),
        6 => Some(3),
        _ => None,
    }
}

struct Recorder<'a> {
    world: &'a World,
    pose: AgentPose,
    steps: Vec<(super::Frame, u8)>,
}

impl<'a> Recorder<'a> {
    fn new(world: &'a World, pose: AgentPose) -> Self {
        Recorder { world, pose, steps: Vec::new() }
    }

    fn act(&mut self, action: u8) -> Result<()> {
        let frame = render(self.world, &self.pose);
        let (pose, _) = step(self.world, &self.pose, action)?;
        self.steps.push((frame, action));
        self.pose = pose;
        Ok(())
    }
}

/// Left-hand wall following over pathway tiles for `n_steps` actions,
/// with occasional camera flourishes so all 9 actions occur in the corpus.
pub fn path_follow_expert(
    world: &World,
    start: AgentPose,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if world.tile(start.tile()) != TileKind::Path {
        return Err(PpgtaError::Contract(
            "path-follow expert must start on a pathway tile".into(),
        ));
    }
    let mut rng = stream(seed, "expert.path");
    let mut rec = Recorder::new(world, start);
    // begin on a cardinal heading
    if rec.pose.heading % 2 == 1 {
        rec.act(4)?;
    }
    while rec.steps.len() < n_steps {
        // camera flourish: look up/down, step back and return
        if rec.steps.len() > 4 && rng.gen_ratio(1, 13) {
            rec.act(6)?;
            rec.act(7)?;
            continue;
        }
        let h = rec.pose.heading;
        let tile = rec.pose.tile();
        // left, straight, right, back in that order
        let preference = [(h + 2) % 8, h, (h + 6) % 8, (h + 4) % 8];
        let mut moved = false;
        for dir in preference {
            let d = DIRS8[dir as usize];
            let target = (tile.0 + d.0, tile.1 + d.1);
            let jumpable = world.tile(target) == TileKind::Gap
                && world
                    .can_jump(tile, d)
                    .map(|land| world.tile(land) == TileKind::Path)
                    .unwrap_or(false);
            if (world.tile(target) == TileKind::Path && world.can_move(tile, target))
                || jumpable
            {
                for r in rotations(h, dir) {
                    rec.act(r)?;
                    if rec.steps.len() >= n_steps {
                        break;
                    }
                }
                if rec.steps.len() >= n_steps {
                    moved = true;
                    break;
                }
                rec.act(if jumpable { 8 } else { 0 })?;
                moved = true;
                break;
            }
        }
        if !moved {
            rec.act(4)?; // boxed in: spin until something opens up
        }
        // occasional back-and-forth to exercise the backward translate
        if moved && rec.steps.len() + 2 <= n_steps && rng.gen_ratio(1, 29) {
            let h = rec.pose.heading;
            let tile = rec.pose.tile();
            let back = DIRS8[(h as usize + 4) % 8];
            let behind = (tile.0 + back.0, tile.1 + back.1);
            if world.tile(behind) == TileKind::Path && world.can_move(tile, behind) {
                rec.act(1)?;
                rec.act(0)?;
            }
        }
    }
    rec.steps.truncate(n_steps);
    Ok(Trajectory {
        kind: ExpertKind::PathFollow,
        seed,
        world_seed: world.spec.seed,
        steps: rec.steps,
    })
}

/// Ring tiles around an OOI in CCW order (consecutive entries are adjacent).
pub fn ring_tiles(center: (i32, i32)) -> [(i32, i32); 8] {
    let mut out = [(0, 0); 8];
    for (i, d) in DIRS8.iter().enumerate() {
        out[i] = (center.0 + d.0, center.1 + d.1);
    }
    out
}

/// Orbits the OOI, visiting every reachable ring position and re-facing the
/// object at each so all faces show up in the recorded frames.
pub fn orbit_expert(world: &World, ooi_id: u32, start_ring: usize, seed: u64) -> Result<Trajectory> {
    let ooi = world
        .oois
        .iter()
        .find(|o| o.id == ooi_id)
        .ok_or_else(|| PpgtaError::Contract(format!("unknown OOI id {ooi_id}")))?;
    let ring = ring_tiles(ooi.tile);
    let walkable: Vec<bool> = ring.iter().map(|t| world.walkable(*t)).collect();
    if walkable.iter().all(|w| !w) {
        return Err(PpgtaError::UntestableOoi(ooi_id));
    }

    // plan the visit order: full CCW loop when the ring is open, otherwise
    // sweep the contiguous arc containing the start twice (there and back)
    let start = (0..8)
        .map(|k| (start_ring + k) % 8)
        .find(|i| walkable[*i])
        .unwrap();
    let full_ring = walkable.iter().all(|w| *w)
        && (0..8).all(|i| world.can_move(ring[i], ring[(i + 1) % 8]));
    let plan: Vec<usize> = if full_ring {
        (0..=8).map(|k| (start + k) % 8).collect()
    } else {
        let mut fwd = vec![start];
        let mut i = start;
        while walkable[(i + 1) % 8]
            && world.can_move(ring[i], ring[(i + 1) % 8])
            && (i + 1) % 8 != start
        {
            i = (i + 1) % 8;
            fwd.push(i);
        }
        let mut back = vec![start];
        let mut i = start;
        while walkable[(i + 7) % 8]
            && world.can_move(ring[i], ring[(i + 7) % 8])
            && (i + 7) % 8 != start
        {
            i = (i + 7) % 8;
            back.push(i);
        }
        let mut plan: Vec<usize> = fwd.iter().rev().cloned().collect();
        plan.extend(back.iter().skip(1));
        // return sweep
        let mut rev: Vec<usize> = plan.iter().rev().skip(1).cloned().collect();
        plan.append(&mut rev);
        plan
    };

    let first = plan[0];
    let pose = AgentPose::at_tile(ring[first].0, ring[first].1, heading_towards(ring[first], ooi.tile));
    let mut rec = Recorder::new(world, pose);
    let mut rng = stream(seed, "expert.orbit");
    for window in plan.windows(2) {
        let (_here, next) = (window[0], window[1]);
        // face the object
        let face_dir = heading_towards(rec.pose.tile(), ooi.tile);
        for r in rotations(rec.pose.heading, face_dir) {
            rec.act(r)?;
        }
        if rng.gen_ratio(1, 4) {
            rec.act(6)?;
            rec.act(7)?;
        }
        let dir = heading_towards(rec.pose.tile(), ring[next]);
        match move_action(rec.pose.heading, dir) {
            Some(a) => rec.act(a)?,
            None => {
                // diagonal relative move: rotate one notch and strafe
                rec.act(4)?;
                if let Some(a) = move_action(rec.pose.heading, dir) {
                    rec.act(a)?;
                }
            }
        }
    }
    // final re-face
    let face_dir = heading_towards(rec.pose.tile(), ooi.tile);
    for r in rotations(rec.pose.heading, face_dir) {
        rec.act(r)?;
    }
    Ok(Trajectory {
        kind: ExpertKind::OrbitTest,
        seed,
        world_seed: world.spec.seed,
        steps: rec.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldSpec};

    #[test]
    fn path_follow_stays_on_pathways_and_is_deterministic() {
        let world = generate_world(&WorldSpec::default()).unwrap();
        let t = world.path_tiles()[0];
        let start = AgentPose::at_tile(t.0, t.1, 0);
        let a = path_follow_expert(&world, start, 80, 7).unwrap();
        let b = path_follow_expert(&world, start, 80, 7).unwrap();
        assert_eq!(a.steps.len(), 80);
        assert_eq!(a.actions(), b.actions());
        assert_eq!(a.kind, ExpertKind::PathFollow);
        // replay and check the agent only occupies pathway tiles
        let mut pose = start;
        for action in a.actions() {
            pose = step(&world, &pose, action).unwrap().0;
            assert_eq!(world.tile(pose.tile()), TileKind::Path);
        }
    }

    #[test]
    fn path_follow_rejects_off_path_starts() {
        let world = generate_world(&WorldSpec::default()).unwrap();
        let ooi = world.oois[0].tile;
        assert!(path_follow_expert(&world, AgentPose::at_tile(ooi.0, ooi.1, 0), 10, 0).is_err());
    }

    #[test]
    fn orbit_expert_circles_the_object() {
        let world = generate_world(&WorldSpec::default()).unwrap();
        let ooi = world
            .oois
            .iter()
            .find(|o| o.reachable)
            .expect("default world has reachable OOIs");
        let traj = orbit_expert(&world, ooi.id, 0, 3).unwrap();
        assert_eq!(traj.kind, ExpertKind::OrbitTest);
        assert!(!traj.steps.is_empty());
        // replay: every pose stays on the OOI's walkable ring
        let ring = ring_tiles(ooi.tile);
        let first = *ring.iter().find(|t| world.walkable(**t)).unwrap();
        let mut pose =
            AgentPose::at_tile(first.0, first.1, heading_towards(first, ooi.tile));
        let mut visited = std::collections::BTreeSet::new();
        visited.insert(pose.tile());
        for action in traj.actions() {
            pose = step(&world, &pose, action).unwrap().0;
            visited.insert(pose.tile());
        }
        let on_ring = visited.iter().filter(|t| ring.contains(t)).count();
        assert!(on_ring >= 2, "orbit must move along the ring");
        assert!(visited.iter().all(|t| ring.contains(t)));
    }

    #[test]
    fn orbit_rejects_unknown_and_sealed_oois() {
        let world = generate_world(&WorldSpec::default()).unwrap();
        assert!(orbit_expert(&world, 10_000, 0, 0).is_err());
    }

    #[test]
    fn rotations_take_the_short_way_round() {
        assert_eq!(rotations(0, 2), vec![4, 4]);
        assert_eq!(rotations(0, 6), vec![5, 5]);
        assert_eq!(rotations(3, 3), Vec::<u8>::new());
        assert_eq!(rotations(7, 0), vec![4]);
    }
}
