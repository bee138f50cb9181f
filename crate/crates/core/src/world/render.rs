//! First-person column raycaster and birds-eye map rasterizer.
//!
//! Rendering is a pure function of (world, pose). The raycaster also exposes
//! a per-pixel owner buffer naming the OOI each wall pixel belongs to, which
//! the oracle detector turns into exact screen-space bounding boxes.

use super::{AgentPose, BugKind, Frame, Ooi, TileKind, World, DIRS8, FRAME_H, FRAME_W};

const FOV: f32 = std::f32::consts::FRAC_PI_3; // 60 degrees
const MAX_DIST: f32 = 14.0;

const SKY_TOP: (u8, u8, u8) = (90, 140, 210);
const SKY_BOTTOM: (u8, u8, u8) = (150, 190, 235);
const FOG: (u8, u8, u8) = (120, 130, 140);
const PATH_COLOR: (u8, u8, u8) = (205, 200, 190);
const GRASS_COLOR: (u8, u8, u8) = (70, 120, 60);
const GAP_COLOR: (u8, u8, u8) = (15, 15, 25);
const WALL_COLOR: (u8, u8, u8) = (95, 85, 75);

/// Base color pair (pattern foreground / background) per OOI type.
const TYPE_COLORS: [((u8, u8, u8), (u8, u8, u8)); 4] = [
    ((200, 70, 60), (150, 40, 35)),   // rock-pillar signature: red bands
    ((60, 80, 210), (35, 45, 140)),   // barrel signature: blue checker
    ((225, 180, 40), (160, 120, 25)), // tire signature: yellow diagonals
    ((190, 60, 200), (120, 30, 130)), // chair signature: magenta dots
];

/// Procedural 8x8 face texture lookup with optional bug transforms.
pub fn texture_color(ooi: &Ooi, face: usize, u: f32, v: f32) -> (u8, u8, u8) {
    let (mut ui, mut vi) = (
        ((u * 8.0) as i32).clamp(0, 7),
        ((v * 8.0) as i32).clamp(0, 7),
    );
    if ooi.bugged_faces[face] {
        match ooi.bug_kind {
            // downsampled 4x then upsampled: texels quantized to 4x4 blocks
            Some(BugKind::LowResolution) => {
                ui = (ui / 4) * 4;
                vi = (vi / 4) * 4;
            }
            // stretched 2x horizontally and cropped to the left half
            Some(BugKind::Stretched) => {
                ui /= 2;
            }
            None => {}
        }
    }
    let (fg, bg) = TYPE_COLORS[ooi.ooi_type as usize];
    let variant = ooi.faces[face] as i32;
    let on = match ooi.ooi_type {
        0 => (vi + variant) % 4 < 2,                  // horizontal bands
        1 => (ui / 2 + vi / 2 + variant) % 2 == 0,    // checker
        2 => (ui + vi + variant) % 4 < 2,             // diagonals
        _ => ui % 3 == variant % 3 && vi % 3 == 1,    // dots
    };
    if on {
        fg
    } else {
        bg
    }
}

fn shade(c: (u8, u8, u8), f: f32) -> (u8, u8, u8) {
    (
        (c.0 as f32 * f) as u8,
        (c.1 as f32 * f) as u8,
        (c.2 as f32 * f) as u8,
    )
}

fn lerp(a: (u8, u8, u8), b: (u8, u8, u8), t: f32) -> (u8, u8, u8) {
    (
        (a.0 as f32 + (b.0 as f32 - a.0 as f32) * t) as u8,
        (a.1 as f32 + (b.1 as f32 - a.1 as f32) * t) as u8,
        (a.2 as f32 + (b.2 as f32 - a.2 as f32) * t) as u8,
    )
}

struct Hit {
    dist: f32,
    tile: (i32, i32),
    face: usize, // 0 N, 1 E, 2 S, 3 W
    u: f32,
}

fn cast(world: &World, px: f32, py: f32, angle: f32) -> Option<Hit> {
    let dx = angle.cos();
    let dy = -angle.sin(); // grid y grows southward
    let mut tx = px.floor() as i32;
    let mut ty = py.floor() as i32;
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let delta_x = if dx.abs() < 1e-6 { f32::MAX } else { (1.0 / dx).abs() };
    let delta_y = if dy.abs() < 1e-6 { f32::MAX } else { (1.0 / dy).abs() };
    let mut side_x = if dx > 0.0 {
        (tx as f32 + 1.0 - px) * delta_x
    } else {
        (px - tx as f32) * delta_x
    };
    let mut side_y = if dy > 0.0 {
        (ty as f32 + 1.0 - py) * delta_y
    } else {
        (py - ty as f32) * delta_y
    };
    let mut dist;
    loop {
        let x_side;
        if side_x < side_y {
            dist = side_x;
            side_x += delta_x;
            tx += step_x;
            x_side = true;
        } else {
            dist = side_y;
            side_y += delta_y;
            ty += step_y;
            x_side = false;
        }
        if dist > MAX_DIST {
            return None;
        }
        let kind = world.tile((tx, ty));
        if matches!(kind, TileKind::Blocked | TileKind::Ooi) {
            let face = if x_side {
                if step_x > 0 {
                    3 // entered from the west
                } else {
                    1
                }
            } else if step_y > 0 {
                0 // entered from the north
            } else {
                2
            };
            let u = if x_side {
                let hy = py + dist * dy;
                hy - hy.floor()
            } else {
                let hx = px + dist * dx;
                hx - hx.floor()
            };
            return Some(Hit { dist, tile: (tx, ty), face, u });
        }
    }
}

/// Renders the 32x32 frame plus a per-pixel OOI-owner buffer.
pub fn render_with_owners(world: &World, pose: &AgentPose) -> (Frame, Vec<Option<u32>>) {
    let (w, h) = (FRAME_W, FRAME_H);
    let mut frame = Frame::new(w, h);
    let mut owners: Vec<Option<u32>> = vec![None; w * h];
    let heading_angle = pose.heading as f32 * std::f32::consts::FRAC_PI_4;
    let horizon = h as f32 / 2.0 + pose.pitch_offset as f32 * 3.0;
    let focal = (w as f32 / 2.0) / (FOV / 2.0).tan();

    for col in 0..w {
        let offset = col as f32 + 0.5 - w as f32 / 2.0;
        let beta = (offset / focal).atan();
        let angle = heading_angle - beta;
        let hit = cast(world, pose.x, pose.y, angle);
        let cos_b = beta.cos();
        let (wall_top, wall_bot) = match &hit {
            Some(hit) => {
                let perp = (hit.dist * cos_b).max(0.05);
                let slice = h as f32 / perp;
                (horizon - slice / 2.0, horizon + slice / 2.0)
            }
            None => (horizon, horizon),
        };
        let dx = angle.cos();
        let dy = -angle.sin();
        for row in 0..h {
            let y = row as f32 + 0.5;
            let color = if y < wall_top {
                // sky
                let t = (y / horizon.max(1.0)).clamp(0.0, 1.0);
                lerp(SKY_TOP, SKY_BOTTOM, t)
            } else if y <= wall_bot {
                let hit = hit.as_ref().unwrap();
                let v = ((y - wall_top) / (wall_bot - wall_top).max(1e-3)).clamp(0.0, 0.999);
                let brightness =
                    (1.0 / (1.0 + 0.12 * hit.dist)).max(0.25) * [1.0, 0.85, 0.7, 0.85][hit.face];
                let base = match world.ooi_at(hit.tile) {
                    Some(ooi) => {
                        owners[row * w + col] = Some(ooi.id);
                        texture_color(ooi, hit.face, hit.u, v)
                    }
                    None => WALL_COLOR,
                };
                shade(base, brightness)
            } else {
                // floor casting
                let drop = (y - horizon).max(0.5);
                let row_dist = 0.5 * focal / drop;
                if row_dist > MAX_DIST {
                    FOG
                } else {
                    let ray_dist = row_dist / cos_b;
                    let fx = pose.x + dx * ray_dist;
                    let fy = pose.y + dy * ray_dist;
                    let kind = world.tile((fx.floor() as i32, fy.floor() as i32));
                    let base = match kind {
                        TileKind::Path => PATH_COLOR,
                        TileKind::Gap => GAP_COLOR,
                        _ => GRASS_COLOR,
                    };
                    let fade = (1.0 / (1.0 + 0.08 * row_dist)).max(0.3);
                    shade(base, fade)
                }
            };
            frame.set(col, row, color);
        }
    }
    (frame, owners)
}

pub fn render(world: &World, pose: &AgentPose) -> Frame {
    render_with_owners(world, pose).0
}

// ---------------------------------------------------------------------------
// Birds-eye maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestStatus {
    Success,
    Failed,
    Missed,
}

const BE_PATH: (u8, u8, u8) = (255, 255, 255);
const BE_GRASS: (u8, u8, u8) = (38, 52, 38);
const BE_DARK: (u8, u8, u8) = (20, 20, 20);
const BE_GAP: (u8, u8, u8) = (12, 12, 32);
const BE_TRACE: (u8, u8, u8) = (220, 30, 30);
const BE_SUCCESS: (u8, u8, u8) = (40, 200, 40);
const BE_FAILED: (u8, u8, u8) = (220, 40, 40);
const BE_MISSED: (u8, u8, u8) = (128, 128, 128);

/// Pathways white, everything else dark, exploration traces red, OOI dots
/// green/red/gray by test status. `scale` is pixels per tile; tiles outside
/// the grid are clipped.
pub fn render_birdseye(
    world: &World,
    traces: &[Vec<(i32, i32)>],
    ooi_status: &[(u32, TestStatus)],
    scale: usize,
) -> Frame {
    let s = world.size() as usize;
    let mut img = Frame::new(s * scale, s * scale);
    for ty in 0..s {
        for tx in 0..s {
            let color = match world.tile((tx as i32, ty as i32)) {
                TileKind::Path => BE_PATH,
                TileKind::Grass => BE_GRASS,
                TileKind::Gap => BE_GAP,
                _ => BE_DARK,
            };
            fill_tile(&mut img, tx, ty, scale, color);
        }
    }
    for trace in traces {
        for &(tx, ty) in trace {
            if tx < 0 || ty < 0 || tx >= s as i32 || ty >= s as i32 {
                continue;
            }
            fill_tile(&mut img, tx as usize, ty as usize, scale, BE_TRACE);
        }
    }
    for &(id, status) in ooi_status {
        let Some(ooi) = world.oois.iter().find(|o| o.id == id) else {
            continue;
        };
        let color = match status {
            TestStatus::Success => BE_SUCCESS,
            TestStatus::Failed => BE_FAILED,
            TestStatus::Missed => BE_MISSED,
        };
        fill_tile(&mut img, ooi.tile.0 as usize, ooi.tile.1 as usize, scale, color);
    }
    img
}

fn fill_tile(img: &mut Frame, tx: usize, ty: usize, scale: usize, color: (u8, u8, u8)) {
    for dy in 0..scale {
        for dx in 0..scale {
            img.set(tx * scale + dx, ty * scale + dy, color);
        }
    }
}

/// Direction index whose unit vector best matches facing `to` from `from`.
pub fn heading_towards(from: (i32, i32), to: (i32, i32)) -> u8 {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    for (i, d) in DIRS8.iter().enumerate() {
        if (d.0.signum(), d.1.signum()) == (dx.signum(), dy.signum()) {
            return i as u8;
        }
    }
    0
}
