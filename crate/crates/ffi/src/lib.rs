//! C ABI over the simulator and evaluation pipeline: opaque handles,
//! integer error codes, and a thread-local last-error message.
//!
//! The matching header lives at `include/ppgta.h`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::ptr;

use ppgta::config::RunConfig;
use ppgta::vision::OracleDetector;
use ppgta::world::render::render;
use ppgta::world::{generate_world, step, AgentPose, World};
use ppgta::PpgtaError;

pub const PPGTA_OK: c_int = 0;
pub const PPGTA_ERR_CONFIG: c_int = 2;
pub const PPGTA_ERR_DIVERGED: c_int = 3;
pub const PPGTA_ERR_CONTRACT: c_int = 4;
pub const PPGTA_ERR_IO: c_int = 5;
pub const PPGTA_ERR_NULL: c_int = 6;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(e: &PpgtaError) -> c_int {
    let code = match e {
        PpgtaError::Config(_) | PpgtaError::MissingArtifact(_) => PPGTA_ERR_CONFIG,
        PpgtaError::Diverged(_) => PPGTA_ERR_DIVERGED,
        PpgtaError::Io(_) | PpgtaError::CorruptFile { .. } => PPGTA_ERR_IO,
        _ => PPGTA_ERR_CONTRACT,
    };
    let msg = CString::new(e.to_string()).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
    code
}

/// Message for the most recent error on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ppgta_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |s| s.as_ptr())
    })
}

/// Opaque world handle.
pub struct PpgtaWorld {
    world: World,
}

/// Opaque simulation session: a world plus an agent pose.
pub struct PpgtaSession {
    world: World,
    pose: AgentPose,
}

/// Builds a world from a config file (null path = defaults). Returns null
/// on failure; inspect `ppgta_last_error`.
#[no_mangle]
pub unsafe extern "C" fn ppgta_world_new(config_path: *const c_char) -> *mut PpgtaWorld {
    let cfg = if config_path.is_null() {
        Ok(RunConfig::default())
    } else {
        match CStr::from_ptr(config_path).to_str() {
            Ok(p) => RunConfig::load(std::path::Path::new(p)),
            Err(_) => Err(PpgtaError::Config("config path is not UTF-8".into())),
        }
    };
    let world = cfg.and_then(|c| generate_world(&c.world_spec()));
    match world {
        Ok(world) => Box::into_raw(Box::new(PpgtaWorld { world })),
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn ppgta_world_free(world: *mut PpgtaWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Grid side length in tiles.
#[no_mangle]
pub unsafe extern "C" fn ppgta_world_size(world: *const PpgtaWorld) -> c_int {
    if world.is_null() {
        return -1;
    }
    (*world).world.size() as c_int
}

/// Number of placed objects of interest.
#[no_mangle]
pub unsafe extern "C" fn ppgta_world_ooi_count(world: *const PpgtaWorld) -> c_int {
    if world.is_null() {
        return -1;
    }
    (*world).world.oois.len() as c_int
}

/// Writes the world dump to `path`.
#[no_mangle]
pub unsafe extern "C" fn ppgta_world_dump(
    world: *const PpgtaWorld,
    path: *const c_char,
) -> c_int {
    if world.is_null() || path.is_null() {
        return PPGTA_ERR_NULL;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => return PPGTA_ERR_CONFIG,
    };
    let write = || -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        (*world).world.write_dump(&mut w)
    };
    match write() {
        Ok(()) => PPGTA_OK,
        Err(e) => set_error(&PpgtaError::Io(e)),
    }
}

/// Starts a session at the given tile with a heading in 0..8. The world
/// handle stays owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn ppgta_session_new(
    world: *const PpgtaWorld,
    tile_x: c_int,
    tile_y: c_int,
    heading: c_int,
) -> *mut PpgtaSession {
    if world.is_null() {
        return ptr::null_mut();
    }
    let w = &(*world).world;
    if !(0..8).contains(&heading) || !w.walkable((tile_x, tile_y)) {
        set_error(&PpgtaError::Contract("invalid spawn tile or heading".into()));
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(PpgtaSession {
        world: w.clone(),
        pose: AgentPose::at_tile(tile_x, tile_y, heading as u8),
    }))
}

#[no_mangle]
pub unsafe extern "C" fn ppgta_session_free(session: *mut PpgtaSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Applies one action (0..9) and returns 0, or an error code.
#[no_mangle]
pub unsafe extern "C" fn ppgta_session_step(session: *mut PpgtaSession, action: c_int) -> c_int {
    if session.is_null() {
        return PPGTA_ERR_NULL;
    }
    if !(0..ppgta::N_ACTIONS as c_int).contains(&action) {
        return set_error(&PpgtaError::Contract(format!("action {action} out of range")));
    }
    let s = &mut *session;
    match step(&s.world, &s.pose, action as u8) {
        Ok((pose, _)) => {
            s.pose = pose;
            PPGTA_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Copies the current 32x32 RGB frame (3072 bytes) into `out`.
#[no_mangle]
pub unsafe extern "C" fn ppgta_session_render(
    session: *const PpgtaSession,
    out: *mut u8,
    out_len: usize,
) -> c_int {
    if session.is_null() || out.is_null() {
        return PPGTA_ERR_NULL;
    }
    let s = &*session;
    let frame = render(&s.world, &s.pose);
    if out_len < frame.pixels.len() {
        return set_error(&PpgtaError::Contract(format!(
            "buffer too small: need {} bytes",
            frame.pixels.len()
        )));
    }
    ptr::copy_nonoverlapping(frame.pixels.as_ptr(), out, frame.pixels.len());
    PPGTA_OK
}

/// Agent tile position and heading.
#[no_mangle]
pub unsafe extern "C" fn ppgta_session_pose(
    session: *const PpgtaSession,
    tile_x: *mut c_int,
    tile_y: *mut c_int,
    heading: *mut c_int,
) -> c_int {
    if session.is_null() || tile_x.is_null() || tile_y.is_null() || heading.is_null() {
        return PPGTA_ERR_NULL;
    }
    let s = &*session;
    let (x, y) = s.pose.tile();
    *tile_x = x;
    *tile_y = y;
    *heading = s.pose.heading as c_int;
    PPGTA_OK
}

/// Number of ground-truth detections in the current view; fills up to
/// `cap` boxes as (x0, y0, x1, y1, type) quintuples.
#[no_mangle]
pub unsafe extern "C" fn ppgta_session_detect(
    session: *const PpgtaSession,
    out: *mut c_int,
    cap: usize,
) -> c_int {
    if session.is_null() {
        return PPGTA_ERR_NULL;
    }
    let s = &*session;
    let oracle = OracleDetector { world: &s.world };
    let boxes = oracle.detect(&s.pose);
    if !out.is_null() {
        for (i, b) in boxes.iter().take(cap).enumerate() {
            let base = out.add(i * 5);
            *base = b.x0 as c_int;
            *base.add(1) = b.y0 as c_int;
            *base.add(2) = b.x1 as c_int;
            *base.add(3) = b.y1 as c_int;
            *base.add(4) = b.ooi_type as c_int;
        }
    }
    boxes.len() as c_int
}
