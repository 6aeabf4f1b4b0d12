//! C ABI over the simulator, trained policies and the benchmark.
//!
//! Every function returns an [`MtcilStatus`]. On failure the message is kept
//! per thread and can be read with [`mtcil_last_error`]. Handles are opaque;
//! free each one exactly once with its `_free` function.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use libc::{c_char, size_t};
use mtcil::bench::{evaluate, Condition, ExpertDriver};
use mtcil::decision::{CommandPair, LatCmd, LonCmd};
use mtcil::episode::Episode;
use mtcil::policy::{Policy, PolicyDriver};
use mtcil::sim::render::{Observation, RASTER_LEN};
use mtcil::sim::{Action, TerminalEvent, Weather};
use mtcil::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtcilStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    NonFinite = 4,
    Format = 5,
    Internal = 6,
}

/// Terminal event codes written by [`mtcil_episode_step`].
pub const MTCIL_RUNNING: i32 = -1;
pub const MTCIL_SUCCESS: i32 = 0;
pub const MTCIL_POOR_END_POSE: i32 = 1;
pub const MTCIL_TIMEOUT: i32 = 2;
pub const MTCIL_LANE_INVASION: i32 = 3;
pub const MTCIL_COLLISION: i32 = 4;

/// Number of bytes in one observation raster.
pub const MTCIL_RASTER_LEN: size_t = RASTER_LEN;

pub struct MtcilEpisode(Episode);

pub struct MtcilPolicy(Arc<Policy>);

/// Terminal-event rates of a benchmark run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MtcilRates {
    pub episodes: size_t,
    pub sr: f64,
    pub pr: f64,
    pub tr: f64,
    pub lr: f64,
    pub cr: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MtcilStatus {
    match e {
        Error::File { .. } | Error::Io(_) => MtcilStatus::Io,
        Error::NonFinite(_) => MtcilStatus::NonFinite,
        Error::Json(_) | Error::Checkpoint(_) | Error::SchemaVersion { .. } | Error::DatasetLine { .. } => MtcilStatus::Format,
        _ => MtcilStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic message.
fn guard<F: FnOnce() -> Result<(), (MtcilStatus, String)>>(f: F) -> MtcilStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtcilStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MtcilStatus::Internal
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (MtcilStatus, String)>;
}

impl<T> IntoFfi<T> for mtcil::Result<T> {
    fn ffi(self) -> Result<T, (MtcilStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (MtcilStatus, String) {
    (MtcilStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: String) -> (MtcilStatus, String) {
    (MtcilStatus::InvalidArgument, msg)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MtcilStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

fn terminal_code(t: Option<TerminalEvent>) -> i32 {
    match t {
        None => MTCIL_RUNNING,
        Some(TerminalEvent::Success) => MTCIL_SUCCESS,
        Some(TerminalEvent::PoorEndPose) => MTCIL_POOR_END_POSE,
        Some(TerminalEvent::Timeout) => MTCIL_TIMEOUT,
        Some(TerminalEvent::LaneInvasion) => MTCIL_LANE_INVASION,
        Some(TerminalEvent::Collision) => MTCIL_COLLISION,
    }
}

/// Copies the last error message of this thread into `buf` (truncated and
/// nul-terminated) and returns the full message length, or 0 if none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mtcil_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Spawns an episode. `weather` is a profile name such as `"ClearNoon"`.
///
/// # Safety
/// `weather` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_episode_new(
    scene: u32,
    route: u32,
    weather: *const c_char,
    seed: u64,
    out: *mut *mut MtcilEpisode,
) -> MtcilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w: Weather = str_arg(weather, "weather")?.parse().ffi()?;
        let ep = Episode::new(scene, route, w, seed).ffi()?;
        *out = Box::into_raw(Box::new(MtcilEpisode(ep)));
        Ok(())
    })
}

/// # Safety
/// `ep` must come from [`mtcil_episode_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtcil_episode_free(ep: *mut MtcilEpisode) {
    if !ep.is_null() {
        drop(Box::from_raw(ep));
    }
}

/// Renders the current observation into `raster` (channel-major, 5x48x48)
/// and writes the ego speed.
///
/// # Safety
/// `raster` must be writable for `len` bytes; `speed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_episode_observe(
    ep: *mut MtcilEpisode,
    raster: *mut u8,
    len: size_t,
    speed: *mut f64,
) -> MtcilStatus {
    guard(|| {
        let ep = ep.as_mut().ok_or_else(|| null("ep"))?;
        if raster.is_null() || speed.is_null() {
            return Err(null("raster/speed"));
        }
        if len < RASTER_LEN {
            return Err(invalid(format!("raster buffer holds {len} bytes, need {RASTER_LEN}")));
        }
        let obs = ep.0.observe();
        ptr::copy_nonoverlapping(obs.raster.as_ptr(), raster, RASTER_LEN);
        *speed = obs.ego_speed;
        Ok(())
    })
}

/// Writes the current lateral and longitudinal command indices.
///
/// # Safety
/// `lat` and `lon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_episode_commands(ep: *const MtcilEpisode, lat: *mut i32, lon: *mut i32) -> MtcilStatus {
    guard(|| {
        let ep = ep.as_ref().ok_or_else(|| null("ep"))?;
        if lat.is_null() || lon.is_null() {
            return Err(null("lat/lon"));
        }
        let c = ep.0.commands().ffi()?;
        *lat = c.lat.index() as i32;
        *lon = c.lon.index() as i32;
        Ok(())
    })
}

/// Advances one tick. Controls are clipped to [-1, 1]. Writes a terminal
/// code, [`MTCIL_RUNNING`] while the episode continues.
///
/// # Safety
/// `terminal` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_episode_step(ep: *mut MtcilEpisode, steer: f64, accel: f64, terminal: *mut i32) -> MtcilStatus {
    guard(|| {
        let ep = ep.as_mut().ok_or_else(|| null("ep"))?;
        if terminal.is_null() {
            return Err(null("terminal"));
        }
        let a = Action::new(steer, accel);
        if !a.is_finite() {
            return Err((MtcilStatus::NonFinite, "controls must be finite".into()));
        }
        *terminal = terminal_code(ep.0.step(a.clipped()).ffi()?);
        Ok(())
    })
}

/// Current tick and ego pose `(x, y, heading)` and speed.
///
/// # Safety
/// `state` must be writable for 4 doubles; `tick` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_episode_state(ep: *const MtcilEpisode, tick: *mut u32, state: *mut f64) -> MtcilStatus {
    guard(|| {
        let ep = ep.as_ref().ok_or_else(|| null("ep"))?;
        if tick.is_null() || state.is_null() {
            return Err(null("tick/state"));
        }
        let w = &ep.0.world;
        *tick = w.tick;
        let vals = [w.ego.pose.position.x, w.ego.pose.position.y, w.ego.pose.heading, w.ego.speed];
        ptr::copy_nonoverlapping(vals.as_ptr(), state, 4);
        Ok(())
    })
}

/// Loads a checkpoint written by `mtcil train`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_policy_load(path: *const c_char, out: *mut *mut MtcilPolicy) -> MtcilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = PathBuf::from(str_arg(path, "path")?);
        let policy = Policy::load(&p).ffi()?;
        *out = Box::into_raw(Box::new(MtcilPolicy(Arc::new(policy))));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from [`mtcil_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtcil_policy_free(policy: *mut MtcilPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Clipped controls for one observation and command pair.
///
/// # Safety
/// `raster` must be readable for `len` bytes; `steer` and `accel` writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_policy_act(
    policy: *const MtcilPolicy,
    raster: *const u8,
    len: size_t,
    speed: f64,
    lat: i32,
    lon: i32,
    steer: *mut f64,
    accel: *mut f64,
) -> MtcilStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or_else(|| null("policy"))?;
        if raster.is_null() || steer.is_null() || accel.is_null() {
            return Err(null("raster/steer/accel"));
        }
        if len != RASTER_LEN {
            return Err(invalid(format!("raster has {len} bytes, expected {RASTER_LEN}")));
        }
        if !speed.is_finite() {
            return Err((MtcilStatus::NonFinite, "speed must be finite".into()));
        }
        let cmds = CommandPair::new(LatCmd::from_index(lat as i64).ffi()?, LonCmd::from_index(lon as i64).ffi()?);
        let obs = Observation {
            raster: std::slice::from_raw_parts(raster, len).to_vec(),
            ego_speed: speed,
        };
        let a = policy.0.act(&obs, cmds).ffi()?;
        *steer = a.steer;
        *accel = a.accel;
        Ok(())
    })
}

/// Runs the benchmark for `condition` (`"TT"`, `"tT"` or `"tt"`). A null
/// `policy` evaluates the scripted expert.
///
/// # Safety
/// `condition` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtcil_evaluate(
    policy: *const MtcilPolicy,
    condition: *const c_char,
    episodes_per_route: u32,
    seed: u64,
    out: *mut MtcilRates,
) -> MtcilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c: Condition = str_arg(condition, "condition")?.parse().ffi()?;
        let (report, _) = match policy.as_ref() {
            Some(p) => {
                let p = p.0.clone();
                evaluate(|| Ok(PolicyDriver::new(p.clone())), "policy", c, episodes_per_route, seed).ffi()?
            }
            None => evaluate(|| Ok(ExpertDriver), "expert", c, episodes_per_route, seed).ffi()?,
        };
        let r = report.rates;
        *out = MtcilRates {
            episodes: report.episodes,
            sr: r.sr,
            pr: r.pr,
            tr: r.tr,
            lr: r.lr,
            cr: r.cr,
        };
        Ok(())
    })
}
