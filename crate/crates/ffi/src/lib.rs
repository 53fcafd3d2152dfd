//! C ABI over the simulator.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `_free` function. Fallible calls return an
//! [`AgentsimStatus`]; on failure a message is available from
//! [`agentsim_last_error`] on the same thread until the next failing call.
//! Strings returned by the library are freed with [`agentsim_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use agentsim::config::ExperimentConfig;
use agentsim::estimator::{bernstein_bound, StreamStats};
use agentsim::metrics::RunReport;
use agentsim::simulation::simulate;
use agentsim::workload::{load_trace, parse_tool_name, parse_trace, ProgramSpec, ToolCallMessage, ToolParse};
use agentsim::{Error, PolicyKind, SimConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    Simulation = 7,
    /// Tool-name parsing found no tool call.
    NotFound = 8,
    Panic = 99,
}

/// A loaded workload.
pub struct AgentsimTrace(Vec<ProgramSpec>);

/// Policy, engine, memory and estimator settings for one run.
pub struct AgentsimConfig(SimConfig);

/// The result of one run.
pub struct AgentsimReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: AgentsimStatus, msg: impl Into<String>) -> AgentsimStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> AgentsimStatus {
    match err {
        Error::Io { .. } => AgentsimStatus::Io,
        Error::TraceFormat { .. } | Error::Json(_) | Error::Csv(_) => AgentsimStatus::Parse,
        Error::Config(_) | Error::EmptyStats(_) => AgentsimStatus::Config,
        _ => AgentsimStatus::Simulation,
    }
}

fn from_error(err: Error) -> AgentsimStatus {
    fail(status_of(&err), err.to_string())
}

/// Runs `f`, converting panics into `Panic`.
fn guard(f: impl FnOnce() -> AgentsimStatus) -> AgentsimStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(AgentsimStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, AgentsimStatus> {
    if p.is_null() {
        return Err(fail(AgentsimStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AgentsimStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn out_ptr<T>(out: *mut T, what: &str) -> Result<(), AgentsimStatus> {
    if out.is_null() {
        Err(fail(AgentsimStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul removed").into_raw()
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failing call on this thread, or null. Owned by the
/// library; valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn agentsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn agentsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn agentsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a JSONL trace file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_trace_load(path: *const c_char, out: *mut *mut AgentsimTrace) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        let path = tri!(str_arg(path, "path"));
        match load_trace(path) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(AgentsimTrace(t)));
                AgentsimStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Parses a trace from JSONL text held in memory.
///
/// # Safety
/// `jsonl` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_trace_from_jsonl(
    jsonl: *const c_char,
    out: *mut *mut AgentsimTrace,
) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        let text = tri!(str_arg(jsonl, "jsonl"));
        match parse_trace(text.as_bytes(), Path::new("<memory>")) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(AgentsimTrace(t)));
                AgentsimStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of programs in a trace; 0 for null.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agentsim_trace_len(trace: *const AgentsimTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agentsim_trace_free(trace: *mut AgentsimTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Default settings with the given policy (`fcfs`, `continuum`, ...).
///
/// # Safety
/// `policy` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_config_default(
    policy: *const c_char,
    out: *mut *mut AgentsimConfig,
) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        let policy = tri!(parse_policy(policy));
        let cfg = SimConfig::new(policy, Default::default(), Default::default());
        *out = Box::into_raw(Box::new(AgentsimConfig(cfg)));
        AgentsimStatus::Ok
    })
}

/// Builds settings from experiment-config TOML. The first listed policy is
/// selected; change it with [`agentsim_config_set_policy`].
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_config_from_toml(
    toml: *const c_char,
    out: *mut *mut AgentsimConfig,
) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        let text = tri!(str_arg(toml, "toml"));
        let cfg = match ExperimentConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        let Some(&policy) = cfg.policies.first() else {
            return fail(AgentsimStatus::Config, "config lists no policies");
        };
        let sim = cfg.sim_config(policy);
        if let Err(e) = sim.validate() {
            return from_error(e);
        }
        *out = Box::into_raw(Box::new(AgentsimConfig(sim)));
        AgentsimStatus::Ok
    })
}

/// # Safety
/// `config` must be a live handle; `policy` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn agentsim_config_set_policy(
    config: *mut AgentsimConfig,
    policy: *const c_char,
) -> AgentsimStatus {
    guard(|| {
        let Some(cfg) = config.as_mut() else {
            return fail(AgentsimStatus::NullPointer, "config is null");
        };
        cfg.0.policy = tri!(parse_policy(policy));
        AgentsimStatus::Ok
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agentsim_config_free(config: *mut AgentsimConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

unsafe fn parse_policy(p: *const c_char) -> Result<PolicyKind, AgentsimStatus> {
    str_arg(p, "policy")?
        .parse()
        .map_err(|e: Error| fail(AgentsimStatus::InvalidArgument, e.to_string()))
}

/// Simulates `trace` under `config`. Both handles stay owned by the caller.
///
/// # Safety
/// `config` and `trace` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_run(
    config: *const AgentsimConfig,
    trace: *const AgentsimTrace,
    seed: u64,
    out: *mut *mut AgentsimReport,
) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        let (Some(cfg), Some(trace)) = (config.as_ref(), trace.as_ref()) else {
            return fail(AgentsimStatus::NullPointer, "config or trace is null");
        };
        match simulate(cfg.0.clone(), trace.0.clone(), seed) {
            Ok(o) => {
                *out = Box::into_raw(Box::new(AgentsimReport(o.report)));
                AgentsimStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Mean job completion time in seconds; NaN for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agentsim_report_jct_mean(report: *const AgentsimReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.jct_mean_s)
}

/// Completed programs per second; NaN for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agentsim_report_throughput(report: *const AgentsimReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.throughput_jobs_per_s)
}

/// Total bubble time in seconds; NaN for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agentsim_report_bubble_total(report: *const AgentsimReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.bubble_total_s)
}

/// True when every program finished.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agentsim_report_complete(report: *const AgentsimReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.complete)
}

/// The full report as JSON; free with [`agentsim_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_report_to_json(
    report: *const AgentsimReport,
    out: *mut *mut c_char,
) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        let Some(r) = report.as_ref() else {
            return fail(AgentsimStatus::NullPointer, "report is null");
        };
        match serde_json::to_string_pretty(&r.0) {
            Ok(s) => {
                *out = into_c_string(s);
                AgentsimStatus::Ok
            }
            Err(e) => from_error(e.into()),
        }
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agentsim_report_free(report: *mut AgentsimReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Upper confidence bound on the mean of `len` samples in `[0, upper]`.
///
/// # Safety
/// `samples` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_bernstein_bound(
    samples: *const f64,
    len: usize,
    delta: f64,
    upper: f64,
    out: *mut f64,
) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        if samples.is_null() {
            return fail(AgentsimStatus::NullPointer, "samples is null");
        }
        if !(delta > 0.0 && delta < 1.0) || !(upper > 0.0 && upper.is_finite()) {
            return fail(AgentsimStatus::InvalidArgument, "need 0 < delta < 1 and finite upper > 0");
        }
        let xs = std::slice::from_raw_parts(samples, len);
        if xs.iter().any(|x| !x.is_finite()) {
            return fail(AgentsimStatus::InvalidArgument, "samples must be finite");
        }
        match bernstein_bound(&StreamStats::from_samples(xs.iter().copied()), delta, upper) {
            Ok(b) => {
                *out = b;
                AgentsimStatus::Ok
            }
            Err(e) => fail(AgentsimStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Extracts the tool name from a model output. `bash_mode` treats the whole
/// text as a shell command. Returns `NotFound` when there is no tool call.
///
/// # Safety
/// `output` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentsim_parse_tool_name(
    output: *const c_char,
    bash_mode: bool,
    out: *mut *mut c_char,
) -> AgentsimStatus {
    guard(|| {
        tri!(out_ptr(out, "out"));
        let text = tri!(str_arg(output, "output"));
        let msg = if bash_mode {
            ToolCallMessage::bash(text)
        } else {
            ToolCallMessage::new(text)
        };
        match parse_tool_name(&msg) {
            ToolParse::Tool(name) => {
                *out = into_c_string(name);
                AgentsimStatus::Ok
            }
            ToolParse::NoCall => fail(AgentsimStatus::NotFound, "no tool call"),
            ToolParse::Malformed => fail(AgentsimStatus::NotFound, "malformed tool call"),
        }
    })
}
