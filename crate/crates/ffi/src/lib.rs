//! C ABI over `remac-core`.
//!
//! Episodes live behind an opaque `RemacEpisode` handle. Structured data
//! crosses the boundary as UTF-8 JSON strings owned by the library; release
//! them with `remac_string_free`. Every fallible call returns a
//! `RemacStatus`, and `remac_last_error` describes the most recent failure on
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use remac::bench::tasks::{canonical_plan, instantiate_task, TaskName};
use remac::bench::{run_bench, BenchConfig};
use remac::executor::{run_episode, EpisodeConfig, EpisodeResult, Mission, Setting};
use remac::reasoning::BackendSpec;
use remac::world::{load_scenario, Scenario};
use serde_json::Value;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Scenario = 4,
    Backend = 5,
    /// The episode has not been run yet.
    NotRun = 6,
    Internal = 7,
}

/// Outcome of a finished episode, mirroring the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemacEpisodeStatus {
    Success = 0,
    PlanFailure = 2,
    BlindFailure = 3,
    BackendAbort = 4,
}

/// Opaque episode handle.
pub struct RemacEpisode {
    task: TaskName,
    scenario: Scenario,
    config: EpisodeConfig,
    backend: BackendSpec,
    result: Option<EpisodeResult>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(RemacStatus, String);

impl Failure {
    fn new(status: RemacStatus, message: impl std::fmt::Display) -> Self {
        Failure(status, message.to_string())
    }
}

/// Runs `f`, recording failures and panics in the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RemacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RemacStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RemacStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(RemacStatus::NullPointer, "string argument is null"));
    }
    // SAFETY: the caller guarantees a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure::new(RemacStatus::InvalidUtf8, e))
}

unsafe fn write_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(RemacStatus::NullPointer, "output pointer is null"));
    }
    let c = CString::new(text).map_err(|e| Failure::new(RemacStatus::Internal, e))?;
    // SAFETY: checked non-null above; the caller owns the slot.
    unsafe { *out = c.into_raw() };
    Ok(())
}

unsafe fn episode<'a>(h: *const RemacEpisode) -> Result<&'a RemacEpisode, Failure> {
    // SAFETY: handles only come from `remac_episode_new` and stay valid until freed.
    unsafe { h.as_ref() }.ok_or_else(|| Failure::new(RemacStatus::NullPointer, "episode handle is null"))
}

fn invalid(message: impl std::fmt::Display) -> Failure {
    Failure::new(RemacStatus::InvalidArgument, message)
}

fn build_episode(json: &str) -> Result<RemacEpisode, Failure> {
    let doc: Value = serde_json::from_str(json).map_err(invalid)?;
    let obj = doc.as_object().ok_or_else(|| invalid("episode options must be a JSON object"))?;
    const KNOWN: [&str; 11] = [
        "task",
        "setting",
        "seed",
        "backend",
        "max_retries",
        "max_iterations",
        "replan_budget",
        "success_prob",
        "robot_count",
        "continue_mode",
        "scenario",
    ];
    if let Some(k) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(invalid(format!("unknown option `{k}`")));
    }
    let text = |key: &str| obj.get(key).and_then(Value::as_str);
    let task: TaskName = text("task").ok_or_else(|| invalid("`task` is required"))?.parse().map_err(invalid)?;
    let setting: Setting = text("setting").unwrap_or("REMAC").parse().map_err(invalid)?;
    let seed = obj.get("seed").map_or(Some(0), Value::as_u64).ok_or_else(|| invalid("`seed` must be an integer"))?;
    let backend = BackendSpec::parse(text("backend").unwrap_or("oracle")).map_err(invalid)?;

    let mut config = EpisodeConfig::new(setting, seed);
    let uint = |key: &str| -> Result<Option<u64>, Failure> {
        obj.get(key)
            .map(|v| v.as_u64().ok_or_else(|| invalid(format!("`{key}` must be a non-negative integer"))))
            .transpose()
    };
    if let Some(v) = uint("max_retries")? {
        config.max_retries = v as u32;
    }
    if let Some(v) = uint("max_iterations")? {
        config.max_iterations = v as u32;
    }
    if let Some(v) = uint("replan_budget")? {
        config.replan_budget = v as u32;
    }
    if let Some(v) = uint("robot_count")? {
        config.robot_count = v as usize;
    }
    if let Some(v) = obj.get("success_prob") {
        config.success_prob = Some(v.as_f64().ok_or_else(|| invalid("`success_prob` must be a number"))?);
    }
    config.continue_mode = obj.get("continue_mode").and_then(Value::as_bool).unwrap_or(false);
    config.validate().map_err(invalid)?;

    let scenario = match obj.get("scenario") {
        Some(s) => Scenario::from_json(&s.to_string()).map_err(|e| Failure::new(RemacStatus::Scenario, e))?,
        None => instantiate_task(task.spec(), seed),
    };
    Ok(RemacEpisode { task, scenario, config, backend, result: None })
}

/// Creates an episode from a JSON options object. `task` is required;
/// `setting` (default "REMAC"), `seed`, `backend` ("oracle", "echo" or
/// "remote"), `max_retries`, `max_iterations`, `replan_budget`,
/// `success_prob`, `robot_count`, `continue_mode` and `scenario` (a full
/// scenario document) are optional.
///
/// # Safety
/// `options_json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn remac_episode_new(options_json: *const c_char, out: *mut *mut RemacEpisode) -> RemacStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(RemacStatus::NullPointer, "output pointer is null"));
        }
        // SAFETY: forwarded caller contract.
        let json = unsafe { read_str(options_json) }?;
        let episode = build_episode(json)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(episode)) };
        Ok(())
    })
}

/// Runs the episode. Running again starts over with the same configuration.
///
/// # Safety
/// `handle` must come from `remac_episode_new` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn remac_episode_run(handle: *mut RemacEpisode) -> RemacStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let ep = unsafe { handle.as_mut() }
            .ok_or_else(|| Failure::new(RemacStatus::NullPointer, "episode handle is null"))?;
        let mission = Mission::for_task(ep.task.spec(), &ep.scenario)
            .map_err(|e| Failure::new(RemacStatus::Scenario, e))?;
        let mut backend = ep.backend.build().map_err(|e| Failure::new(RemacStatus::Backend, e))?;
        let result = run_episode(&ep.scenario, &mission, &ep.config, &mut backend)
            .map_err(|e| Failure::new(RemacStatus::Scenario, e))?;
        ep.result = Some(result);
        Ok(())
    })
}

fn finished(ep: &RemacEpisode) -> Result<&EpisodeResult, Failure> {
    ep.result.as_ref().ok_or_else(|| Failure::new(RemacStatus::NotRun, "episode has not been run"))
}

/// Writes the outcome of the last run.
///
/// # Safety
/// `handle` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn remac_episode_status(
    handle: *const RemacEpisode,
    out: *mut RemacEpisodeStatus,
) -> RemacStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let result = finished(unsafe { episode(handle) }?)?;
        if out.is_null() {
            return Err(Failure::new(RemacStatus::NullPointer, "output pointer is null"));
        }
        let status = match result.status {
            remac::executor::EpisodeStatus::Success => RemacEpisodeStatus::Success,
            remac::executor::EpisodeStatus::PlanFailure => RemacEpisodeStatus::PlanFailure,
            remac::executor::EpisodeStatus::BlindFailure => RemacEpisodeStatus::BlindFailure,
            remac::executor::EpisodeStatus::BackendAbort => RemacEpisodeStatus::BackendAbort,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = status };
        Ok(())
    })
}

unsafe fn export(
    handle: *const RemacEpisode,
    out: *mut *mut c_char,
    render: impl FnOnce(&EpisodeResult) -> String,
) -> RemacStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let result = finished(unsafe { episode(handle) }?)?;
        // SAFETY: forwarded caller contract.
        unsafe { write_string(out, render(result)) }
    })
}

/// Metrics of the last run as a JSON object.
///
/// # Safety
/// `handle` must be live and `out` writable. Free the string with `remac_string_free`.
#[no_mangle]
pub unsafe extern "C" fn remac_episode_metrics_json(handle: *const RemacEpisode, out: *mut *mut c_char) -> RemacStatus {
    // SAFETY: forwarded caller contract.
    unsafe { export(handle, out, |r| serde_json::to_string(&r.metrics).unwrap_or_default()) }
}

/// Event trace of the last run, one JSON object per line.
///
/// # Safety
/// `handle` must be live and `out` writable. Free the string with `remac_string_free`.
#[no_mangle]
pub unsafe extern "C" fn remac_episode_trace_jsonl(handle: *const RemacEpisode, out: *mut *mut c_char) -> RemacStatus {
    // SAFETY: forwarded caller contract.
    unsafe { export(handle, out, |r| r.trace.to_jsonl()) }
}

/// Reflection database of the last run as JSON.
///
/// # Safety
/// `handle` must be live and `out` writable. Free the string with `remac_string_free`.
#[no_mangle]
pub unsafe extern "C" fn remac_episode_reflections_json(
    handle: *const RemacEpisode,
    out: *mut *mut c_char,
) -> RemacStatus {
    // SAFETY: forwarded caller contract.
    unsafe { export(handle, out, |r| r.reflections.to_json()) }
}

/// Releases an episode. Null is ignored.
///
/// # Safety
/// `handle` must come from `remac_episode_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn remac_episode_free(handle: *mut RemacEpisode) {
    if !handle.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Runs a benchmark sweep from a BenchConfig JSON document and returns the
/// report as JSON.
///
/// # Safety
/// `config_json` must be NUL-terminated and `out` writable. Free the string with `remac_string_free`.
#[no_mangle]
pub unsafe extern "C" fn remac_bench_run(config_json: *const c_char, out: *mut *mut c_char) -> RemacStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let json = unsafe { read_str(config_json) }?;
        let config: BenchConfig = serde_json::from_str(json).map_err(invalid)?;
        let report = run_bench(&config, None).map_err(|e| Failure::new(RemacStatus::InvalidArgument, format!("{e:#}")))?;
        // SAFETY: forwarded caller contract.
        unsafe { write_string(out, report.to_json()) }
    })
}

/// The reference plan for `task` on the randomized instance `seed`, as JSON.
///
/// # Safety
/// `task` must be NUL-terminated and `out` writable. Free the string with `remac_string_free`.
#[no_mangle]
pub unsafe extern "C" fn remac_canonical_plan_json(
    task: *const c_char,
    seed: u64,
    robot_count: u32,
    out: *mut *mut c_char,
) -> RemacStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let task: TaskName = unsafe { read_str(task) }?.parse().map_err(invalid)?;
        let n = robot_count as usize;
        let scenario = instantiate_task(task.spec(), seed).with_robot_count(n.max(1));
        let world = load_scenario(&scenario).map_err(|e| Failure::new(RemacStatus::Scenario, e))?;
        let plan = canonical_plan(task.spec(), &world, n)
            .ok_or_else(|| invalid(format!("no canonical plan for {task} with {n} robots")))?;
        // SAFETY: forwarded caller contract.
        unsafe { write_string(out, plan.to_json()) }
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn remac_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: the pointer came from `CString::into_raw`.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Description of the calling thread's most recent failure, or null.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn remac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn remac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
