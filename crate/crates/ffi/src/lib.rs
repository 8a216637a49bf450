//! C interface to the collaborative optimization pipeline.
//!
//! Objects cross the boundary as opaque handles created by `coopt_*_new` or
//! `coopt_run` style constructors and released with the matching `_free`.
//! Every fallible function returns a [`CooptStatus`]; on failure a message
//! for the calling thread can be read with [`coopt_last_error`].
//!
//! Strings returned by accessors are owned by their handle and stay valid
//! until that handle is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coopt_core::config::{ExperimentConfig, ScheduleKind};
use coopt_core::downstream::spearman;
use coopt_core::error::Error;
use coopt_core::experiments::{self, RunReport};
use coopt_core::linalg::Matrix;
use coopt_core::uniformity::uniform_value;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CooptStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or not valid UTF-8.
    InvalidArgument = 2,
    /// The configuration failed to parse or validate.
    Config = 3,
    /// The protocol stalled, rejected a message or could not merge.
    Protocol = 4,
    /// A numeric routine produced or received non-finite values.
    Numeric = 5,
    /// Malformed CPTD/CPTT bytes or a filesystem failure.
    Format = 6,
    /// A caller-provided buffer is smaller than the data to copy.
    BufferTooSmall = 7,
    /// Any other library error.
    Failed = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

/// Experiment configuration.
pub struct CooptConfig {
    inner: ExperimentConfig,
}

/// Outcome of one collaborative round.
pub struct CooptRun {
    report: RunReport,
    digest: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> CooptStatus {
    match err {
        Error::Config(_) | Error::InvalidPrior(_) | Error::MissingLabels => CooptStatus::Config,
        Error::Protocol { .. }
        | Error::Timeout { .. }
        | Error::NotReady { .. }
        | Error::Merge { .. }
        | Error::Selection(_)
        | Error::Alignment(_)
        | Error::IllPosed { .. } => CooptStatus::Protocol,
        Error::Numeric(_) | Error::InsufficientData(_) | Error::Correlation(_) => CooptStatus::Numeric,
        Error::Format(_) | Error::Io(_) => CooptStatus::Format,
        _ => CooptStatus::Failed,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (CooptStatus, String)>) -> CooptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CooptStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            CooptStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CooptStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CooptStatus, String) {
    (CooptStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CooptStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (CooptStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (CooptStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message describing the calling thread's most recent failure, or an empty
/// string after a successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn coopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn coopt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a configuration holding the built-in defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn coopt_config_new(out: *mut *mut CooptConfig) -> CooptStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(CooptConfig { inner: ExperimentConfig::default() }));
        Ok(())
    })
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coopt_config_from_toml(toml: *const c_char, out: *mut *mut CooptConfig) -> CooptStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| (CooptStatus::InvalidArgument, "toml is not valid UTF-8".to_string()))?;
        let inner = ExperimentConfig::from_toml_str(text).map_err(lib_err)?;
        inner.validate().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CooptConfig { inner }));
        Ok(())
    })
}

/// Overrides the master seed.
///
/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn coopt_config_set_seed(cfg: *mut CooptConfig, seed: u64) -> CooptStatus {
    guard(|| {
        out_ptr(cfg, "cfg")?.inner.seed = seed;
        Ok(())
    })
}

/// Runs participants on `threads` workers; 1 keeps the serial schedule.
///
/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn coopt_config_set_threads(cfg: *mut CooptConfig, threads: usize) -> CooptStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        if threads == 0 {
            return Err((CooptStatus::InvalidArgument, "threads must be at least 1".into()));
        }
        cfg.inner.protocol.threads = threads;
        if threads > 1 {
            cfg.inner.protocol.schedule = ScheduleKind::Threaded;
        }
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopt_config_free(cfg: *mut CooptConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Executes one round on the configured dataset and probes the result
/// when the dataset has a labeled evaluation split.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coopt_run(cfg: *const CooptConfig, out: *mut *mut CooptRun) -> CooptStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = deref(cfg, "cfg")?;
        cfg.inner.validate().map_err(lib_err)?;
        let report = experiments::run(&cfg.inner).map_err(lib_err)?;
        let digest = CString::new(report.outcome.metrics.merged_digest.clone()).expect("hex digest");
        *out = Box::into_raw(Box::new(CooptRun { report, digest }));
        Ok(())
    })
}

/// Number of samples in the merged dataset; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_sample_count(run: *const CooptRun) -> usize {
    run.as_ref().map_or(0, |r| r.report.outcome.merged.len())
}

/// Target dimension `n` shared by all participants; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_target_dim(run: *const CooptRun) -> usize {
    run.as_ref().map_or(0, |r| r.report.outcome.metrics.n)
}

/// Id of the participant whose prior had the lowest uniform value.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_best_prior(run: *const CooptRun, out: *mut u32) -> CooptStatus {
    guard(|| {
        let run = deref(run, "run")?;
        *out_ptr(out, "out")? = run.report.outcome.metrics.best_prior_id;
        Ok(())
    })
}

/// Uniform value reported by `participant`.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_uniform_value(run: *const CooptRun, participant: u32, out: *mut f64) -> CooptStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let out = out_ptr(out, "out")?;
        *out = *run
            .report
            .outcome
            .metrics
            .uniform_values
            .get(&participant)
            .ok_or_else(|| (CooptStatus::InvalidArgument, format!("no participant {participant}")))?;
        Ok(())
    })
}

/// Held-out probe accuracy; fails with `InvalidArgument` when the run had
/// no evaluation split.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_probe_accuracy(run: *const CooptRun, out: *mut f64) -> CooptStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let out = out_ptr(out, "out")?;
        *out = run
            .report
            .probe
            .as_ref()
            .map(|p| p.accuracy)
            .ok_or_else(|| (CooptStatus::InvalidArgument, "run has no evaluation split".into()))?;
        Ok(())
    })
}

/// Hex SHA-256 digest of the merged dataset.
///
/// # Safety
/// `run` must be null or a live handle. The string lives as long as `run`.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_digest(run: *const CooptRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.digest.as_ptr())
}

/// Copies the merged targets, row-major in sample-id order, into `buf`.
/// `len` is the capacity in floats and must be at least
/// `sample_count * target_dim`.
///
/// # Safety
/// `run` must be a live handle and `buf` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_copy_targets(run: *const CooptRun, buf: *mut f32, len: usize) -> CooptStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let src = run.report.outcome.merged.targets();
        if len < src.len() {
            return Err((CooptStatus::BufferTooSmall, format!("need {} floats, got {len}", src.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// Copies merged sample ids into `buf` (capacity `len`).
///
/// # Safety
/// `run` must be a live handle and `buf` must hold `len` ids.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_copy_sample_ids(run: *const CooptRun, buf: *mut u64, len: usize) -> CooptStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let samples = run.report.outcome.merged.samples();
        if len < samples.len() {
            return Err((CooptStatus::BufferTooSmall, format!("need {} ids, got {len}", samples.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        for (i, s) in samples.iter().enumerate() {
            *buf.add(i) = s.id;
        }
        Ok(())
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopt_run_free(run: *mut CooptRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Uniform value of a row-major `rows × cols` feature matrix.
///
/// # Safety
/// `features` must point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coopt_uniform_value(
    features: *const f64,
    rows: usize,
    cols: usize,
    tau: f64,
    normalize: bool,
    out: *mut f64,
) -> CooptStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| (CooptStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
        let data = slice(features, len, "features")?;
        let m = Matrix::from_vec(rows, cols, data.to_vec()).map_err(lib_err)?;
        *out = uniform_value(&m, tau, normalize).map_err(lib_err)?;
        Ok(())
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `xs` and `ys` must each point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coopt_spearman(xs: *const f64, ys: *const f64, len: usize, out: *mut f64) -> CooptStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (xs, ys) = (slice(xs, len, "xs")?, slice(ys, len, "ys")?);
        *out = spearman(xs, ys).map_err(lib_err)?;
        Ok(())
    })
}
