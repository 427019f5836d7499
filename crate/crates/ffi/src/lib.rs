//! C ABI over the `streaming-flow` library.
//!
//! Models and datasets are opaque handles created by `*_load` and released
//! with the matching `*_free`. Every fallible call returns an [`SfpStatus`];
//! the message for the most recent failure on the calling thread is
//! available from [`sfp_last_error_message`].
//!
//! Buffers are caller-owned. Lengths are element counts, not bytes.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use streaming_flow::flows::conditional_velocity_into;
use streaming_flow::stream::{integrate_chunk_from_state, sample_trajectories};
use streaming_flow::{
    ChunkParams, Dataset, Error, FlowConfig, FlowSpec, ObservationHistory, Trajectory, VelocityField,
    VelocityModel,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    /// Numerical failure during integration or evaluation.
    Runtime = 6,
    /// The action callback asked to stop.
    Cancelled = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// Opaque trained velocity model.
pub struct SfpModel(VelocityModel);

/// Opaque demonstration dataset.
pub struct SfpDataset(Dataset);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SfpModelInfo {
    /// Dimension of one action.
    pub action_dim: usize,
    /// Dimension of the integrated state: `action_dim`, `2 * action_dim`
    /// for latent models, `horizon * action_dim` for baseline models.
    pub state_dim: usize,
    pub obs_dim: usize,
    pub history_len: usize,
    pub t_pred_seconds: f64,
    /// 0 plain, 1 latent, 2 baseline.
    pub variant: c_int,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SfpDatasetInfo {
    pub num_demos: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub history_len: usize,
    pub t_pred_seconds: f64,
}

/// Receives action `index` at flow time `t`. Return nonzero to stop the
/// chunk early; the call then returns [`SfpStatus::Cancelled`].
pub type SfpActionCallback =
    Option<unsafe extern "C" fn(user_data: *mut c_void, index: usize, t: f64, action: *const f64, len: usize) -> c_int>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

struct Failure(SfpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DimensionMismatch { .. } => SfpStatus::DimensionMismatch,
            Error::Io { .. } => SfpStatus::Io,
            Error::Parse { .. } | Error::Json(_) => SfpStatus::Parse,
            Error::Domain { .. } | Error::Config { .. } | Error::Empty(_) | Error::NonFinite(_) | Error::NotPsd { .. } => {
                SfpStatus::InvalidArgument
            }
            Error::SinkClosed => SfpStatus::Cancelled,
            _ => SfpStatus::Runtime,
        };
        Failure(code, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SfpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SfpStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SfpStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SfpStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn to_path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const SfpModel) -> Result<&'a VelocityModel, Failure> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), Failure> {
    if expected == found {
        Ok(())
    } else {
        Err(Failure(
            SfpStatus::DimensionMismatch,
            format!("{what}: expected {expected} values, found {found}"),
        ))
    }
}

/// Splits a flat history of `history_len * obs_dim` values.
fn history(model: &VelocityModel, flat: &[f64]) -> Result<ObservationHistory, Failure> {
    check_len("history", model.history_width(), flat.len())?;
    if model.obs_dim == 0 {
        return Err(invalid("model has zero observation dimension"));
    }
    let obs: Vec<Vec<f64>> = flat.chunks_exact(model.obs_dim).map(<[f64]>::to_vec).collect();
    Ok(ObservationHistory::new(&obs)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sfp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failed call on this thread, or null if the
/// last call succeeded. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sfp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfp_model_load(path: *const c_char, out: *mut *mut SfpModel) -> SfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let m = VelocityModel::load(to_path(path)?)?;
        *out = Box::into_raw(Box::new(SfpModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sfp_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sfp_model_free(model: *mut SfpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfp_model_info(model: *const SfpModel, out: *mut SfpModelInfo) -> SfpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = SfpModelInfo {
            action_dim: m.action_dim,
            state_dim: m.state_dim(),
            obs_dim: m.obs_dim,
            history_len: m.history_len,
            t_pred_seconds: m.t_pred_seconds,
            variant: match m.flow {
                FlowSpec::Plain(_) => 0,
                FlowSpec::Latent(_) => 1,
                FlowSpec::Baseline { .. } => 2,
            },
        };
        Ok(())
    })
}

/// Evaluates `v(state, t | history)` into `out` (`state_dim` values).
///
/// # Safety
/// Each pointer must reference at least its stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn sfp_model_velocity(
    model: *const SfpModel,
    state: *const f64,
    state_len: usize,
    t: f64,
    history: *const f64,
    history_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SfpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let s = slice(state, state_len, "state")?;
        let h = slice(history, history_len, "history")?;
        let o = slice_mut(out, out_len, "out")?;
        check_len("out", m.state_dim(), o.len())?;
        m.velocity(s, t, h, o)?;
        Ok(())
    })
}

/// Integrates one chunk from the full initial state `init` (`state_dim`
/// values; `(a, z)` for latent models). `t_chunk` is in seconds and must
/// cover a whole number `(t_chunk / t_pred) / dt` of Euler steps.
/// Each action is passed to `callback` as soon as it is computed, before
/// the next velocity evaluation. The number of emitted actions is written
/// to `out_steps` when it is non-null.
///
/// # Safety
/// Pointers must reference at least their stated number of doubles;
/// `callback` may be null.
#[no_mangle]
pub unsafe extern "C" fn sfp_stream_chunk(
    model: *const SfpModel,
    history: *const f64,
    history_len: usize,
    init: *const f64,
    init_len: usize,
    t_chunk: f64,
    dt: f64,
    callback: SfpActionCallback,
    user_data: *mut c_void,
    out_steps: *mut usize,
) -> SfpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if matches!(m.flow, FlowSpec::Baseline { .. }) {
            return Err(invalid("baseline models do not stream actions"));
        }
        let h = self::history(m, slice(history, history_len, "history")?)?;
        let init = slice(init, init_len, "init")?;
        let chunk = ChunkParams::new(m.t_pred_seconds, t_chunk, dt)?;
        let mut emitted = 0usize;
        let res = integrate_chunk_from_state(m, &h, init, &chunk, |i, t, a| {
            emitted = i + 1;
            match callback {
                Some(cb) if cb(user_data, i, t, a.as_ptr(), a.len()) != 0 => Err(Error::SinkClosed),
                _ => Ok(()),
            }
        });
        if let Some(n) = out_steps.as_mut() {
            *n = emitted;
        }
        res?;
        Ok(())
    })
}

/// Draws `n` full-horizon action trajectories with `1 / dt` Euler steps.
/// `out` receives `n * (1 / dt + 1) * action_dim` values, trajectory-major
/// then time then action dimension.
///
/// # Safety
/// Pointers must reference at least their stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn sfp_sample_trajectories(
    model: *const SfpModel,
    history: *const f64,
    history_len: usize,
    a_init: *const f64,
    a_init_len: usize,
    sigma0_test: f64,
    n: usize,
    dt: f64,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> SfpStatus {
    guard(|| {
        let m = model_ref(model)?;
        if matches!(m.flow, FlowSpec::Baseline { .. }) {
            return Err(invalid("baseline models sample whole chunks, not trajectories"));
        }
        let h = self::history(m, slice(history, history_len, "history")?)?;
        let a = slice(a_init, a_init_len, "a_init")?;
        let o = slice_mut(out, out_len, "out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs = sample_trajectories(m, &h, a, sigma0_test, n, dt, &mut rng)?;
        let total: usize = trajs.iter().map(|t| t.as_flat().len()).sum();
        check_len("out", total, o.len())?;
        let mut at = 0;
        for tr in &trajs {
            let f = tr.as_flat();
            o[at..at + f.len()].copy_from_slice(f);
            at += f.len();
        }
        Ok(())
    })
}

/// Velocity of the stabilizing conditional flow around one demonstration
/// given as `num_waypoints` evenly spaced points of dimension `dim`.
///
/// # Safety
/// `waypoints` must hold `num_waypoints * dim` doubles; `a` and `out` hold
/// `dim` each.
#[no_mangle]
pub unsafe extern "C" fn sfp_conditional_velocity(
    waypoints: *const f64,
    num_waypoints: usize,
    dim: usize,
    a: *const f64,
    t: f64,
    k: f64,
    sigma0: f64,
    out: *mut f64,
) -> SfpStatus {
    guard(|| {
        let n = num_waypoints.checked_mul(dim).ok_or_else(|| invalid("waypoint buffer too large"))?;
        let xi = Trajectory::from_flat(dim, slice(waypoints, n, "waypoints")?.to_vec())?;
        let cfg = FlowConfig::new(k, sigma0)?;
        let a = slice(a, dim, "a")?;
        let o = slice_mut(out, dim, "out")?;
        conditional_velocity_into(&xi, a, t, &cfg, o)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfp_dataset_load(path: *const c_char, out: *mut *mut SfpDataset) -> SfpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let d = Dataset::load(to_path(path)?)?;
        *out = Box::into_raw(Box::new(SfpDataset(d)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from [`sfp_dataset_load`] and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sfp_dataset_free(dataset: *mut SfpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfp_dataset_info(dataset: *const SfpDataset, out: *mut SfpDatasetInfo) -> SfpStatus {
    guard(|| {
        let d = &dataset.as_ref().ok_or_else(|| null("dataset"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = SfpDatasetInfo {
            num_demos: d.len(),
            action_dim: d.action_dim,
            obs_dim: d.obs_dim,
            history_len: d.history_len,
            t_pred_seconds: d.t_pred_seconds,
        };
        Ok(())
    })
}

/// Copies demonstration `index`. With `waypoints` null only the waypoint
/// count is written; otherwise `waypoints_len` must equal
/// `num_waypoints * action_dim`. `history` (optional) receives
/// `history_len * obs_dim` values.
///
/// # Safety
/// Non-null buffers must hold their stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn sfp_dataset_demo(
    dataset: *const SfpDataset,
    index: usize,
    num_waypoints: *mut usize,
    waypoints: *mut f64,
    waypoints_len: usize,
    history: *mut f64,
    history_len: usize,
) -> SfpStatus {
    guard(|| {
        let d = &dataset.as_ref().ok_or_else(|| null("dataset"))?.0;
        let demo = d
            .demos
            .get(index)
            .ok_or_else(|| invalid(format!("demo index {index} out of range ({})", d.len())))?;
        if let Some(n) = num_waypoints.as_mut() {
            *n = demo.trajectory.len();
        }
        if !waypoints.is_null() {
            let flat = demo.trajectory.as_flat();
            let o = slice_mut(waypoints, waypoints_len, "waypoints")?;
            check_len("waypoints", flat.len(), o.len())?;
            o.copy_from_slice(flat);
        }
        if !history.is_null() {
            let h = demo.history.encode();
            let o = slice_mut(history, history_len, "history")?;
            check_len("history", h.len(), o.len())?;
            o.copy_from_slice(h);
        }
        Ok(())
    })
}
