//! C ABI for the collide-pbe solver.
//!
//! The interface is handle-based: parse a configuration into an opaque
//! simulation handle, run it, then read the moment series and the final
//! density out through plain arrays. All functions return a status code;
//! `cpbe_last_error` retrieves a human-readable message for the most recent
//! failure on the calling thread.
//!
//! Ownership: every handle returned by `cpbe_sim_new` must be released with
//! `cpbe_sim_free`. Buffers are caller-allocated; the `*_count` functions
//! report the required lengths.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use collide_pbe::config::{parse_config_str, RunConfig};
use collide_pbe::grid::project_initial;
use collide_pbe::integrator::{self, RunResult, RunStatus};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpbeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration text was rejected; see `cpbe_last_error`.
    InvalidConfig = 3,
    /// Building the model or integrating failed; see `cpbe_last_error`.
    RunFailed = 4,
    /// The run hit the stiffness guard; partial results are available.
    Aborted = 5,
    /// Results were requested before `cpbe_sim_run`.
    NotRun = 6,
    /// A caller buffer was too small; nothing was written.
    InsufficientCapacity = 7,
}

/// One row of the recorded moment series.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpbeMomentRow {
    pub t: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub norm_one_plus_z: f64,
    pub mass_drift: f64,
    pub dt: f64,
}

struct SimState {
    config: RunConfig,
    result: Option<RunResult>,
}

/// Opaque simulation handle.
pub struct CpbeSim {
    inner: SimState,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpbe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message on this thread into `buffer` (truncated to
/// `capacity` bytes including the NUL). Returns the full message length.
///
/// # Safety
/// `buffer` must point to at least `capacity` writable bytes, or be null
/// (in which case only the length is returned).
#[no_mangle]
pub unsafe extern "C" fn cpbe_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
            // Guarantee termination even when truncating.
            *buffer.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Parse a configuration (the same flat `key = value` text the CLI reads)
/// and return a new simulation handle through `out`.
///
/// # Safety
/// `config_text` must be a valid NUL-terminated string and `out` a valid
/// pointer; the returned handle must be freed with `cpbe_sim_free`.
#[no_mangle]
pub unsafe extern "C" fn cpbe_sim_new(
    config_text: *const c_char,
    out: *mut *mut CpbeSim,
) -> CpbeStatus {
    if config_text.is_null() || out.is_null() {
        set_last_error("null argument");
        return CpbeStatus::NullArgument;
    }
    *out = ptr::null_mut();
    let text = match CStr::from_ptr(config_text).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_last_error("configuration text is not valid UTF-8");
            return CpbeStatus::InvalidUtf8;
        }
    };
    match parse_config_str(text, Path::new(".")) {
        Ok(config) => {
            let sim = Box::new(CpbeSim {
                inner: SimState {
                    config,
                    result: None,
                },
            });
            *out = Box::into_raw(sim);
            CpbeStatus::Ok
        }
        Err(e) => {
            set_last_error(&e.to_string());
            CpbeStatus::InvalidConfig
        }
    }
}

/// Integrate the configured model to `time.t_end`. Rerunning a handle
/// replaces its results.
///
/// # Safety
/// `sim` must be a live handle from `cpbe_sim_new`.
#[no_mangle]
pub unsafe extern "C" fn cpbe_sim_run(sim: *mut CpbeSim) -> CpbeStatus {
    let Some(sim) = sim.as_mut() else {
        set_last_error("null simulation handle");
        return CpbeStatus::NullArgument;
    };
    let state = &mut sim.inner;
    let outcome = (|| -> collide_pbe::Result<RunResult> {
        let grid = state.config.build_grid()?;
        let ws = state.config.build_workspace(grid.clone())?;
        let projection = project_initial(&state.config.init, &grid)?;
        integrator::run(&projection.density, &ws, &state.config.time)
    })();
    match outcome {
        Ok(result) => {
            let aborted = matches!(result.status, RunStatus::StiffnessAbort { .. });
            if let RunStatus::StiffnessAbort { t, ref detail } = result.status {
                set_last_error(&format!("run aborted at t = {t}: {detail}"));
            }
            state.result = Some(result);
            if aborted {
                CpbeStatus::Aborted
            } else {
                CpbeStatus::Ok
            }
        }
        Err(e) => {
            set_last_error(&e.to_string());
            CpbeStatus::RunFailed
        }
    }
}

fn with_result<T>(
    sim: *const CpbeSim,
    f: impl FnOnce(&RunResult) -> (CpbeStatus, Option<T>),
) -> (CpbeStatus, Option<T>) {
    let Some(sim) = (unsafe { sim.as_ref() }) else {
        set_last_error("null simulation handle");
        return (CpbeStatus::NullArgument, None);
    };
    match sim.inner.result.as_ref() {
        Some(result) => f(result),
        None => {
            set_last_error("simulation has not been run");
            (CpbeStatus::NotRun, None)
        }
    }
}

/// Number of grid cells of the simulation's final state.
///
/// # Safety
/// `sim` must be a live handle; returns 0 before `cpbe_sim_run`.
#[no_mangle]
pub unsafe extern "C" fn cpbe_sim_cell_count(sim: *const CpbeSim) -> usize {
    with_result(sim, |r| (CpbeStatus::Ok, Some(r.final_state.values().len())))
        .1
        .unwrap_or(0)
}

/// Copy the final density into caller buffers of length `capacity`.
/// `written` (optional) receives the cell count.
///
/// # Safety
/// `pivots` and `densities` must point to at least `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn cpbe_sim_density(
    sim: *const CpbeSim,
    pivots: *mut f64,
    densities: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> CpbeStatus {
    if pivots.is_null() || densities.is_null() {
        set_last_error("null buffer argument");
        return CpbeStatus::NullArgument;
    }
    let (status, _) = with_result(sim, |r| {
        let cells = r.final_state.values().len();
        if capacity < cells {
            set_last_error("buffer too small for density");
            return (CpbeStatus::InsufficientCapacity, None::<()>);
        }
        let grid = r.final_state.grid();
        for (k, &v) in r.final_state.values().iter().enumerate() {
            *pivots.add(k) = grid.pivot(k);
            *densities.add(k) = v;
        }
        if !written.is_null() {
            *written = cells;
        }
        (CpbeStatus::Ok, None)
    });
    status
}

/// Number of rows in the recorded moment series.
///
/// # Safety
/// `sim` must be a live handle; returns 0 before `cpbe_sim_run`.
#[no_mangle]
pub unsafe extern "C" fn cpbe_sim_moment_count(sim: *const CpbeSim) -> usize {
    with_result(sim, |r| (CpbeStatus::Ok, Some(r.series.rows.len())))
        .1
        .unwrap_or(0)
}

/// Fetch one row of the moment series by index.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpbe_sim_moment_row(
    sim: *const CpbeSim,
    index: usize,
    out: *mut CpbeMomentRow,
) -> CpbeStatus {
    if out.is_null() {
        set_last_error("null output pointer");
        return CpbeStatus::NullArgument;
    }
    let (status, _) = with_result(sim, |r| {
        let Some(row) = r.series.rows.get(index) else {
            set_last_error("moment row index out of range");
            return (CpbeStatus::InsufficientCapacity, None::<()>);
        };
        *out = CpbeMomentRow {
            t: row.t,
            m0: row.m0,
            m1: row.m1,
            m2: row.m2,
            norm_one_plus_z: row.norm_one_plus_z,
            mass_drift: row.mass_drift,
            dt: row.dt,
        };
        (CpbeStatus::Ok, None)
    });
    status
}

/// Release a simulation handle. Null is a no-op.
///
/// # Safety
/// `sim` must be a handle from `cpbe_sim_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cpbe_sim_free(sim: *mut CpbeSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Run the sampled assumption audit for a configuration and copy its
/// `key: value` report into `buffer`, NUL-terminated and truncated to
/// `capacity` bytes. `report_len` (optional) receives the full length
/// including the NUL; pass a null `buffer` to query the length first.
///
/// # Safety
/// `config_text` must be NUL-terminated; `buffer` must point to `capacity`
/// writable bytes or be null (length-query mode).
#[no_mangle]
pub unsafe extern "C" fn cpbe_audit(
    config_text: *const c_char,
    buffer: *mut c_char,
    capacity: usize,
    report_len: *mut usize,
) -> CpbeStatus {
    if config_text.is_null() {
        set_last_error("null argument");
        return CpbeStatus::NullArgument;
    }
    let text = match CStr::from_ptr(config_text).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_last_error("configuration text is not valid UTF-8");
            return CpbeStatus::InvalidUtf8;
        }
    };
    let config = match parse_config_str(text, Path::new(".")) {
        Ok(c) => c,
        Err(e) => {
            set_last_error(&e.to_string());
            return CpbeStatus::InvalidConfig;
        }
    };
    let report = collide_pbe::audit_assumptions(
        &config.kernel,
        &config.probability,
        &config.breakup,
        &config.audit,
    )
    .to_string();
    let bytes = report.as_bytes();
    if !report_len.is_null() {
        *report_len = bytes.len() + 1;
    }
    if !buffer.is_null() && capacity > 0 {
        let n = bytes.len().min(capacity - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
        *buffer.add(n) = 0;
        if n < bytes.len() {
            set_last_error("report truncated to buffer capacity");
            return CpbeStatus::InsufficientCapacity;
        }
    }
    CpbeStatus::Ok
}
