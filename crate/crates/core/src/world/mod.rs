//! Deterministic procedurally generated 2D park world with injectable
//! object-texture bugs and navigation bugs (invisible walls, gaps).

pub mod expert;
pub mod render;

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{PpgtaError, Result};
use crate::rng::stream;

pub const FRAME_W: usize = 32;
pub const FRAME_H: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub grid_size: usize,
    pub path_density: f32,
    pub n_ooi: usize,
    pub bug_ratio: f32,
    pub n_invisible_walls: usize,
    pub n_gaps: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 0,
            grid_size: 64,
            path_density: 0.10,
            n_ooi: 12,
            bug_ratio: 0.5,
            n_invisible_walls: 4,
            n_gaps: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileKind {
    Path,
    Grass,
    Blocked,
    Gap,
    /// Solid tile occupied by an object of interest.
    Ooi,
}

impl TileKind {
    pub fn walkable(self) -> bool {
        matches!(self, TileKind::Path | TileKind::Grass)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TileKind::Path => "path",
            TileKind::Grass => "grass",
            TileKind::Blocked => "blocked",
            TileKind::Gap => "gap",
            TileKind::Ooi => "ooi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BugKind {
    LowResolution,
    Stretched,
}

impl BugKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BugKind::LowResolution => "lowres",
            BugKind::Stretched => "stretched",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ooi {
    pub id: u32,
    pub ooi_type: u8,
    pub tile: (i32, i32),
    /// Per-face texture ids (N, E, S, W).
    pub faces: [u16; 4],
    pub bugged: bool,
    pub bug_kind: Option<BugKind>,
    pub bugged_faces: [bool; 4],
    pub reachable: bool,
}

/// 8 compass headings, CCW from east: E NE N NW W SW S SE.
pub const DIRS8: [(i32, i32); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPose {
    pub x: f32,
    pub y: f32,
    /// One of the 8 compass directions (index into [`DIRS8`]).
    pub heading: u8,
    /// Viewport row shift in [-2, 2].
    pub pitch_offset: i8,
}

impl AgentPose {
    pub fn at_tile(tx: i32, ty: i32, heading: u8) -> Self {
        AgentPose {
            x: tx as f32 + 0.5,
            y: ty as f32 + 0.5,
            heading,
            pitch_offset: 0,
        }
    }

    pub fn tile(&self) -> (i32, i32) {
        (self.x.floor() as i32, self.y.floor() as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Frame { width, height, pixels: vec![0; width * height * 3] }
    }

    pub fn get(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: (u8, u8, u8)) {
        let i = (y * self.width + x) * 3;
        self.pixels[i] = rgb.0;
        self.pixels[i + 1] = rgb.1;
        self.pixels[i + 2] = rgb.2;
    }

    /// Binary P6 PPM encoding.
    pub fn write_ppm(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }
}

/// An undirected blocked edge between two adjacent tiles.
fn edge_key(a: (i32, i32), b: (i32, i32)) -> ((i32, i32), (i32, i32)) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    grid: Vec<TileKind>,
    pub oois: Vec<Ooi>,
    pub walls: BTreeSet<((i32, i32), (i32, i32))>,
}

impl World {
    pub fn size(&self) -> i32 {
        self.spec.grid_size as i32
    }

    pub fn in_bounds(&self, t: (i32, i32)) -> bool {
        t.0 >= 0 && t.1 >= 0 && t.0 < self.size() && t.1 < self.size()
    }

    pub fn tile(&self, t: (i32, i32)) -> TileKind {
        if self.in_bounds(t) {
            self.grid[(t.1 * self.size() + t.0) as usize]
        } else {
            TileKind::Blocked
        }
    }

    fn set_tile(&mut self, t: (i32, i32), k: TileKind) {
        let s = self.size();
        self.grid[(t.1 * s + t.0) as usize] = k;
    }

    pub fn walkable(&self, t: (i32, i32)) -> bool {
        self.in_bounds(t) && self.tile(t).walkable()
    }

    pub fn wall_between(&self, a: (i32, i32), b: (i32, i32)) -> bool {
        self.walls.contains(&edge_key(a, b))
    }

    pub fn ooi_at(&self, t: (i32, i32)) -> Option<&Ooi> {
        self.oois.iter().find(|o| o.tile == t)
    }

    pub fn path_tiles(&self) -> Vec<(i32, i32)> {
        let s = self.size();
        (0..s * s)
            .filter(|i| self.grid[*i as usize] == TileKind::Path)
            .map(|i| (i % s, i / s))
            .collect()
    }

    /// True when the move from `from` to the adjacent tile `to` is legal:
    /// target walkable, no invisible wall, and diagonal moves cannot cut
    /// corners (both orthogonal tiles walkable, none of the four edges
    /// walled).
    pub fn can_move(&self, from: (i32, i32), to: (i32, i32)) -> bool {
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        debug_assert!(dx.abs() <= 1 && dy.abs() <= 1 && (dx, dy) != (0, 0));
        if !self.walkable(to) {
            return false;
        }
        if dx == 0 || dy == 0 {
            return !self.wall_between(from, to);
        }
        let ax = (from.0 + dx, from.1);
        let ay = (from.0, from.1 + dy);
        self.walkable(ax)
            && self.walkable(ay)
            && !self.wall_between(from, ax)
            && !self.wall_between(ax, to)
            && !self.wall_between(from, ay)
            && !self.wall_between(ay, to)
    }

    /// A jump from `from` in cardinal direction `dir` crosses a single gap
    /// tile and lands two tiles ahead.
    pub fn can_jump(&self, from: (i32, i32), dir: (i32, i32)) -> Option<(i32, i32)> {
        if dir.0 != 0 && dir.1 != 0 {
            return None;
        }
        let mid = (from.0 + dir.0, from.1 + dir.1);
        let land = (from.0 + 2 * dir.0, from.1 + 2 * dir.1);
        if self.tile(mid) == TileKind::Gap
            && self.walkable(land)
            && !self.wall_between(from, mid)
            && !self.wall_between(mid, land)
        {
            Some(land)
        } else {
            None
        }
    }

    /// Flood fill over the walkable graph (including jump edges) from every
    /// pathway tile; returns per-tile reachability.
    pub fn reachable_from_paths(&self) -> Vec<bool> {
        let s = self.size();
        let mut seen = vec![false; (s * s) as usize];
        let mut queue: Vec<(i32, i32)> = Vec::new();
        for t in self.path_tiles() {
            seen[(t.1 * s + t.0) as usize] = true;
            queue.push(t);
        }
        while let Some(t) = queue.pop() {
            for d in DIRS8 {
                let n = (t.0 + d.0, t.1 + d.1);
                if self.in_bounds(n)
                    && !seen[(n.1 * s + n.0) as usize]
                    && self.can_move(t, n)
                {
                    seen[(n.1 * s + n.0) as usize] = true;
                    queue.push(n);
                }
            }
            for d in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if let Some(land) = self.can_jump(t, d) {
                    if !seen[(land.1 * s + land.0) as usize] {
                        seen[(land.1 * s + land.0) as usize] = true;
                        queue.push(land);
                    }
                }
            }
        }
        seen
    }

    pub fn is_tile_reachable(&self, t: (i32, i32)) -> bool {
        if !self.in_bounds(t) {
            return false;
        }
        self.reachable_from_paths()[(t.1 * self.size() + t.0) as usize]
    }

    /// Text dump: one line per tile (`x y kind`), then one line per OOI
    /// (`id type x y bugged bug_kind`).
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        let s = self.size();
        for y in 0..s {
            for x in 0..s {
                writeln!(w, "{} {} {}", x, y, self.tile((x, y)).as_str())?;
            }
        }
        for o in &self.oois {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                o.id,
                o.ooi_type,
                o.tile.0,
                o.tile.1,
                o.bugged as u8,
                o.bug_kind.map_or("none", |k| k.as_str())
            )?;
        }
        Ok(())
    }
}

/// Applies one of the 9 discrete actions. Blocked moves leave the position
/// unchanged; the frame is always re-rendered.
pub fn step(world: &World, pose: &AgentPose, action: u8) -> Result<(AgentPose, Frame)> {
    if action > 8 {
        return Err(PpgtaError::Contract(format!("invalid action id {action}")));
    }
    let mut p = *pose;
    let tile = p.tile();
    let h = p.heading as usize;
    match action {
        0..=3 => {
            let dir_idx = match action {
                0 => h,           // forward
                1 => (h + 4) % 8, // back
                2 => (h + 2) % 8, // strafe left
                _ => (h + 6) % 8, // strafe right
            };
            let d = DIRS8[dir_idx];
            let to = (tile.0 + d.0, tile.1 + d.1);
            if world.can_move(tile, to) {
                p.x = to.0 as f32 + 0.5;
                p.y = to.1 as f32 + 0.5;
            }
        }
        4 => p.heading = ((h + 1) % 8) as u8,
        5 => p.heading = ((h + 7) % 8) as u8,
        6 => p.pitch_offset = (p.pitch_offset + 1).min(2),
        7 => p.pitch_offset = (p.pitch_offset - 1).max(-2),
        _ => {
            let d = DIRS8[h];
            if let Some(land) = world.can_jump(tile, d) {
                p.x = land.0 as f32 + 0.5;
                p.y = land.1 as f32 + 0.5;
            }
        }
    }
    let frame = render::render(world, &p);
    Ok((p, frame))
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Pocket: an OOI niche whose walkable ring connects to the rest of the map
/// through exactly one entrance edge, so a single invisible wall can seal it.
#[derive(Debug, Clone)]
struct Pocket {
    entrance: ((i32, i32), (i32, i32)),
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    if spec.grid_size < 16 {
        return Err(PpgtaError::InfeasibleSpec(format!(
            "grid_size {} below minimum 16",
            spec.grid_size
        )));
    }
    if !(0.0..=1.0).contains(&spec.path_density) || !(0.0..=1.0).contains(&spec.bug_ratio) {
        return Err(PpgtaError::InfeasibleSpec(
            "path_density and bug_ratio must lie in [0,1]".into(),
        ));
    }
    let s = spec.grid_size as i32;
    let mut world = World {
        spec: spec.clone(),
        grid: vec![TileKind::Grass; (s * s) as usize],
        oois: Vec::new(),
        walls: BTreeSet::new(),
    };

    carve_paths(&mut world);
    let n_paths = world.path_tiles().len();
    if spec.n_ooi > n_paths {
        return Err(PpgtaError::InfeasibleSpec(format!(
            "n_ooi {} exceeds pathway tile budget {}",
            spec.n_ooi, n_paths
        )));
    }
    let pockets = place_oois(&mut world)?;
    scatter_obstacles(&mut world);
    carve_gaps(&mut world);
    assign_bugs(&mut world);
    place_walls(&mut world, &pockets);

    let reach = world.reachable_from_paths();
    let size = world.size();
    for i in 0..world.oois.len() {
        let tile = world.oois[i].tile;
        let reachable = DIRS8.iter().any(|d| {
            let n = (tile.0 + d.0, tile.1 + d.1);
            world.in_bounds(n)
                && world.tile(n).walkable()
                && reach[(n.1 * size + n.0) as usize]
        });
        world.oois[i].reachable = reachable;
    }
    Ok(world)
}

/// Pathway topology: a serpentine boardwalk promenade over impassable
/// water, dotted with 5x5 grass alcoves that host the OOIs, plus an open
/// grass plaza at the southwest entrance. The single long corridor makes
/// pathway coverage a measure of systematic path following — local
/// wandering only reaches the stretch around the entrance, and the open
/// plaza soaks up agents drawn to unseen ground off the pathways.
fn carve_paths(world: &mut World) {
    let mut rng = stream(world.spec.seed, "world.paths");
    let s = world.size();
    let margin = (s / 10).max(3);
    let first_x = margin;
    let last_x = s - 1 - margin;
    let row_len = (last_x - first_x + 1) as usize;

    // entrance plaza in the southwest corner
    let plaza_y1 = s - 5;
    let plaza_y0 = (plaza_y1 - 15).max(1);
    let plaza_x0 = (margin - 2).max(1);
    let plaza_x1 = (plaza_x0 + 22).min(s - 2);

    // promenade rows above the plaza; the density budget asks for a row
    // count, capped so rows keep an eight-tile pitch (two tiles of water
    // between adjacent alcove fringes)
    let target = ((world.spec.path_density as f64) * (s * s) as f64).round() as usize;
    let top = margin;
    let bottom = plaza_y0 - 6;
    let max_rows = (((bottom - top) / 8) + 1).max(2) as usize;
    let rows = (target / row_len.max(1)).clamp(2, max_rows);
    let spacing = (((bottom - top) / (rows as i32 - 1)).max(8)).min(12);

    let mut row_ys = Vec::new();
    for i in 0..rows {
        let y = top + i as i32 * spacing;
        if y <= bottom {
            row_ys.push(y);
        }
    }
    for &y in &row_ys {
        for x in first_x..=last_x {
            world.set_tile((x, y), TileKind::Path);
        }
    }
    // connectors join alternating row ends into one long corridor
    for i in 0..row_ys.len().saturating_sub(1) {
        let x = if i % 2 == 0 { last_x } else { first_x };
        for y in row_ys[i] + 1..row_ys[i + 1] {
            world.set_tile((x, y), TileKind::Path);
        }
    }
    // entrance stub from the last promenade down into the plaza
    let stub_x = (plaza_x0 + 6).clamp(first_x, last_x);
    let y_last = *row_ys.last().unwrap();
    for y in y_last + 1..plaza_y0 {
        world.set_tile((stub_x, y), TileKind::Path);
    }

    // grass alcoves hang south of each row; OOIs and their sealable
    // pockets live there
    let mut alcoves: Vec<(i32, i32)> = Vec::new();
    for (i, &y) in row_ys.iter().enumerate() {
        let mut x = first_x + 4 + ((i as i32) * 5) % 10;
        while x <= last_x - 4 {
            let cx = (x + rng.gen_range(-1..=1)).clamp(first_x + 3, last_x - 3);
            let on_stub = i + 1 == row_ys.len() && (cx - stub_x).abs() < 5;
            if !on_stub {
                alcoves.push((cx, y + 3));
            }
            x += 10;
        }
    }

    // everything that is neither promenade, alcove, nor plaza floods
    let in_plaza = |t: (i32, i32)| {
        (plaza_x0..=plaza_x1).contains(&t.0) && (plaza_y0..=plaza_y1).contains(&t.1)
    };
    for y in 0..s {
        for x in 0..s {
            let t = (x, y);
            if world.tile(t) != TileKind::Grass {
                continue;
            }
            let sheltered = in_plaza(t)
                || alcoves
                    .iter()
                    .any(|c| (c.0 - x).abs().max((c.1 - y).abs()) <= 2);
            if !sheltered {
                world.set_tile(t, TileKind::Blocked);
            }
        }
    }
}

/// Candidate OOI sites sit within Chebyshev distance 2 of a pathway tile
/// with a fully walkable 8-ring, far enough from other OOIs.
fn place_oois(world: &mut World) -> Result<Vec<Pocket>> {
    let mut rng = stream(world.spec.seed, "world.oois");
    let s = world.size();
    let near_path = |world: &World, t: (i32, i32), radius: i32| {
        (-radius..=radius).any(|dy| {
            (-radius..=radius).any(|dx| world.tile((t.0 + dx, t.1 + dy)) == TileKind::Path)
        })
    };
    let open_ring = |world: &World, t: (i32, i32)| {
        DIRS8
            .iter()
            .all(|d| world.walkable((t.0 + d.0, t.1 + d.1)))
    };

    // a small share of the OOIs go into sealable pockets
    let n_pockets = world
        .spec
        .n_invisible_walls
        .min(world.spec.n_ooi / 4)
        .min(3);
    let mut pockets = Vec::new();
    let mut placed: Vec<(i32, i32)> = Vec::new();
    let far_from_others = |placed: &[(i32, i32)], t: (i32, i32)| {
        placed
            .iter()
            .all(|p| (p.0 - t.0).abs().max((p.1 - t.1).abs()) >= 5)
    };

    // pocket sites: 5x5 all-grass region whose border touches a path tile
    let mut pocket_candidates = Vec::new();
    for y in 3..s - 3 {
        for x in 3..s - 3 {
            let t = (x, y);
            let all_grass = (-2..=2).all(|dy: i32| {
                (-2..=2).all(|dx: i32| world.tile((x + dx, y + dy)) == TileKind::Grass)
            });
            if all_grass && near_path(world, t, 3) {
                pocket_candidates.push(t);
            }
        }
    }
    pocket_candidates.shuffle(&mut rng);
    for t in pocket_candidates {
        if pockets.len() >= n_pockets || !far_from_others(&placed, t) {
            continue;
        }
        if !(-2..=2_i32).all(|dy| {
            (-2..=2_i32).all(|dx| world.tile((t.0 + dx, t.1 + dy)) == TileKind::Grass)
        }) {
            continue;
        }
        // entrance: the border edge-center closest to a path tile
        let edge_centers = [(0, -2), (2, 0), (0, 2), (-2, 0)];
        let mut entrance_dir = None;
        'dirs: for d in edge_centers {
            let outward = (t.0 + d.0 + d.0 / 2, t.1 + d.1 + d.1 / 2);
            if world.walkable(outward) || world.tile(outward) == TileKind::Path {
                entrance_dir = Some(d);
                break 'dirs;
            }
        }
        let Some(d) = entrance_dir else { continue };
        let entrance_tile = (t.0 + d.0, t.1 + d.1);
        for dy in -2..=2_i32 {
            for dx in -2..=2_i32 {
                if dx.abs().max(dy.abs()) == 2 && (dx, dy) != (d.0, d.1) {
                    world.set_tile((t.0 + dx, t.1 + dy), TileKind::Blocked);
                }
            }
        }
        let ring_neighbor = (t.0 + d.0 - d.0.signum(), t.1 + d.1 - d.1.signum());
        pockets.push(Pocket { entrance: edge_key(entrance_tile, ring_neighbor) });
        placed.push(t);
        add_ooi(world, &mut rng, t);
    }

    // open OOIs adjacent to pathways
    let mut open_candidates = Vec::new();
    for y in 1..s - 1 {
        for x in 1..s - 1 {
            let t = (x, y);
            if world.tile(t) == TileKind::Grass && near_path(world, t, 2) && open_ring(world, t)
            {
                open_candidates.push(t);
            }
        }
    }
    open_candidates.shuffle(&mut rng);
    for t in open_candidates {
        if world.oois.len() >= world.spec.n_ooi {
            break;
        }
        if far_from_others(&placed, t) && open_ring(world, t) {
            placed.push(t);
            add_ooi(world, &mut rng, t);
        }
    }
    if world.oois.len() < world.spec.n_ooi {
        return Err(PpgtaError::InfeasibleSpec(format!(
            "only {} of {} OOI sites available (n_ooi budget too high for this layout)",
            world.oois.len(),
            world.spec.n_ooi
        )));
    }
    Ok(pockets)
}

fn add_ooi(world: &mut World, rng: &mut impl Rng, tile: (i32, i32)) {
    let id = world.oois.len() as u32;
    let ooi_type = (id % 4) as u8;
    let faces = [
        rng.gen_range(0..4u16),
        rng.gen_range(0..4u16),
        rng.gen_range(0..4u16),
        rng.gen_range(0..4u16),
    ];
    world.set_tile(tile, TileKind::Ooi);
    world.oois.push(Ooi {
        id,
        ooi_type,
        tile,
        faces,
        bugged: false,
        bug_kind: None,
        bugged_faces: [false; 4],
        reachable: true,
    });
}

fn scatter_obstacles(world: &mut World) {
    let mut rng = stream(world.spec.seed, "world.obstacles");
    let s = world.size();
    let n = ((s * s) as f64 * 0.03) as usize;
    for _ in 0..n {
        let t = (rng.gen_range(1..s - 1), rng.gen_range(1..s - 1));
        if world.tile(t) != TileKind::Grass {
            continue;
        }
        // keep a clear margin around paths and a wider one around OOI niches
        let clear = (-1..=1_i32).all(|dy| {
            (-1..=1_i32).all(|dx| world.tile((t.0 + dx, t.1 + dy)) != TileKind::Path)
        }) && (-2..=2_i32).all(|dy| {
            (-2..=2_i32).all(|dx| world.tile((t.0 + dx, t.1 + dy)) != TileKind::Ooi)
        });
        if clear {
            world.set_tile(t, TileKind::Blocked);
        }
    }
}

fn carve_gaps(world: &mut World) {
    let mut rng = stream(world.spec.seed, "world.gaps");
    let mut candidates: Vec<((i32, i32), (i32, i32))> = Vec::new();
    for t in world.path_tiles() {
        for d in [(1, 0), (0, 1)] {
            let a = (t.0 - d.0, t.1 - d.1);
            let b = (t.0 + d.0, t.1 + d.1);
            if world.tile(a) == TileKind::Path && world.tile(b) == TileKind::Path {
                candidates.push((t, d));
            }
        }
    }
    candidates.shuffle(&mut rng);
    let mut placed = 0;
    let connected_paths = |world: &World| {
        let reach = world.reachable_from_paths();
        let s = world.size();
        world
            .path_tiles()
            .iter()
            .all(|t| reach[(t.1 * s + t.0) as usize])
    };
    for (t, _) in candidates {
        if placed >= world.spec.n_gaps {
            break;
        }
        if world.tile(t) != TileKind::Path {
            continue;
        }
        world.set_tile(t, TileKind::Gap);
        if connected_paths(world) {
            placed += 1;
        } else {
            world.set_tile(t, TileKind::Path);
        }
    }
}

fn assign_bugs(world: &mut World) {
    let mut rng = stream(world.spec.seed, "world.bugs");
    let n = world.oois.len();
    let n_bugged = ((world.spec.bug_ratio as f64) * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_bugged {
            let kind = if rng.gen_bool(0.5) {
                BugKind::LowResolution
            } else {
                BugKind::Stretched
            };
            let mut faces = [false; 4];
            let n_faces = rng.gen_range(1..=4usize);
            let mut face_order: Vec<usize> = (0..4).collect();
            face_order.shuffle(&mut rng);
            for &f in face_order.iter().take(n_faces) {
                faces[f] = true;
            }
            let o = &mut world.oois[i];
            o.bugged = true;
            o.bug_kind = Some(kind);
            o.bugged_faces = faces;
        }
    }
}

fn place_walls(world: &mut World, pockets: &[Pocket]) {
    let mut rng = stream(world.spec.seed, "world.walls");
    let mut budget = world.spec.n_invisible_walls;
    for p in pockets {
        if budget == 0 {
            break;
        }
        world.walls.insert(p.entrance);
        budget -= 1;
    }
    // remaining walls drop onto path-grass edges (alcove and plaza mouths),
    // never across the boardwalk itself, so they inconvenience navigation
    // without severing the promenade
    let mut edges: Vec<((i32, i32), (i32, i32))> = Vec::new();
    for t in world.path_tiles() {
        for d in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = (t.0 + d.0, t.1 + d.1);
            if world.tile(n) == TileKind::Grass {
                edges.push(edge_key(t, n));
            }
        }
    }
    edges.shuffle(&mut rng);
    for e in edges {
        if budget == 0 {
            break;
        }
        if world.walls.insert(e) {
            budget -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = WorldSpec { seed: 11, ..WorldSpec::default() };
        let a = generate_world(&spec).unwrap();
        let b = generate_world(&spec).unwrap();
        let mut da = Vec::new();
        let mut db = Vec::new();
        a.write_dump(&mut da).unwrap();
        b.write_dump(&mut db).unwrap();
        assert_eq!(da, db);
        assert_eq!(a.walls, b.walls);

        let c = generate_world(&WorldSpec { seed: 12, ..spec }).unwrap();
        let mut dc = Vec::new();
        c.write_dump(&mut dc).unwrap();
        assert_ne!(da, dc, "different seeds must differ");
    }

    #[test]
    fn spec_quotas_are_respected() {
        let spec = WorldSpec::default();
        let w = generate_world(&spec).unwrap();
        assert_eq!(w.oois.len(), spec.n_ooi);
        assert_eq!(w.walls.len(), spec.n_invisible_walls);
        let gaps = (0..w.size() * w.size())
            .filter(|i| w.tile((i % w.size(), i / w.size())) == TileKind::Gap)
            .count();
        assert_eq!(gaps, spec.n_gaps);
        let bugged = w.oois.iter().filter(|o| o.bugged).count();
        assert_eq!(bugged, (spec.bug_ratio as f64 * spec.n_ooi as f64).round() as usize);
        for o in &w.oois {
            assert_eq!(o.bugged, o.bug_kind.is_some());
            assert_eq!(o.bugged, o.bugged_faces.iter().any(|f| *f));
        }
    }

    #[test]
    fn ooi_ids_index_the_vector() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        for (i, o) in w.oois.iter().enumerate() {
            assert_eq!(o.id as usize, i);
            assert_eq!(w.tile(o.tile), TileKind::Ooi);
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        assert!(generate_world(&WorldSpec { grid_size: 8, ..WorldSpec::default() }).is_err());
        assert!(generate_world(&WorldSpec { path_density: 1.5, ..WorldSpec::default() })
            .is_err());
        assert!(generate_world(&WorldSpec { n_ooi: 10_000, ..WorldSpec::default() }).is_err());
    }

    #[test]
    fn step_never_enters_unwalkable_tiles() {
        use rand::Rng;
        let w = generate_world(&WorldSpec { seed: 3, ..WorldSpec::default() }).unwrap();
        let spawn = w.path_tiles()[0];
        let mut pose = AgentPose::at_tile(spawn.0, spawn.1, 0);
        let mut rng = crate::rng::stream(0, "world.test");
        for _ in 0..500 {
            let action = rng.gen_range(0..9u8);
            let (next, frame) = step(&w, &pose, action).unwrap();
            assert!(w.walkable(next.tile()), "landed on {:?}", w.tile(next.tile()));
            assert_eq!((frame.width, frame.height), (FRAME_W, FRAME_H));
            pose = next;
        }
        assert!(step(&w, &pose, 9).is_err());
    }

    #[test]
    fn rotation_and_pitch_actions_are_bounded() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let spawn = w.path_tiles()[0];
        let mut pose = AgentPose::at_tile(spawn.0, spawn.1, 0);
        for _ in 0..8 {
            pose = step(&w, &pose, 4).unwrap().0;
        }
        assert_eq!(pose.heading, 0, "eight CCW turns return to start");
        for _ in 0..5 {
            pose = step(&w, &pose, 6).unwrap().0;
        }
        assert_eq!(pose.pitch_offset, 2);
        for _ in 0..10 {
            pose = step(&w, &pose, 7).unwrap().0;
        }
        assert_eq!(pose.pitch_offset, -2);
    }

    #[test]
    fn walls_block_movement() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let &(a, b) = w.walls.iter().next().unwrap();
        if w.walkable(a) && w.walkable(b) {
            assert!(!w.can_move(a, b));
            assert!(!w.can_move(b, a));
        }
        assert!(w.wall_between(a, b));
        assert!(w.wall_between(b, a));
    }

    #[test]
    fn jump_crosses_gap_tiles_only() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let s = w.size();
        let gap = (0..s * s)
            .map(|i| (i % s, i / s))
            .find(|t| w.tile(*t) == TileKind::Gap)
            .unwrap();
        // gaps are carved mid-path, so some cardinal crossing must work
        let crossing = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|d| {
            let from = (gap.0 - d.0, gap.1 - d.1);
            w.walkable(from) && w.can_jump(from, *d) == Some((gap.0 + d.0, gap.1 + d.1))
        });
        assert!(crossing);
        let path = w.path_tiles()[0];
        for d in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            if let Some(land) = w.can_jump(path, d) {
                assert_eq!(w.tile((path.0 + d.0, path.1 + d.1)), TileKind::Gap);
                assert!(w.walkable(land));
            }
        }
    }
}
