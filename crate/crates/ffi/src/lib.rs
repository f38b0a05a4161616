//! C ABI over `deeps-core`.
//!
//! Every fallible call returns a [`DeepsStatus`]. On failure the message is
//! kept per thread and can be read with [`deeps_last_error`]. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use deeps_core::domain::GrayImage;
use deeps_core::harness::output::emit_csv;
use deeps_core::harness::{
    run_experiment, with_threads, ExperimentConfig, RunSummary, StrategySpec,
};
use deeps_core::similarity::{ssim_pair, SsimParams};
use deeps_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeepsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Simulation = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

pub const DEEPS_STRATEGY_DEEPS: u32 = 0;
pub const DEEPS_STRATEGY_RANDOM: u32 = 1;
pub const DEEPS_STRATEGY_ORACLE: u32 = 2;

/// Experiment configuration handle.
pub struct DeepsConfig {
    inner: ExperimentConfig,
}

/// Finished run handle.
pub struct DeepsSummary {
    inner: RunSummary,
}

/// One global round.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DeepsRound {
    pub round_k: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub duration_s: f64,
    pub cohort_energy_j: f64,
    pub cohort_size: u64,
    pub alive_uavs: u64,
    pub dropouts: u64,
}

/// Whole-run metrics. `rounds_to_convergence` is 0 and
/// `time_to_convergence_min` is NaN when the run never converged.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DeepsMetrics {
    pub avg_round_time_s: f64,
    pub rounds_to_convergence: u64,
    pub time_to_convergence_min: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub total_cohort_energy_j: f64,
    pub rounds: u64,
    pub stopped_early: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn core_status(e: &Error) -> DeepsStatus {
    match e {
        Error::Config(_) | Error::Json(_) => DeepsStatus::Config,
        Error::Io(_) | Error::Csv(_) | Error::MissingFile(_) => DeepsStatus::Io,
        Error::DimensionMismatch(..) => DeepsStatus::InvalidArgument,
        _ => DeepsStatus::Simulation,
    }
}

/// Runs `f`, recording its error or panic for `deeps_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (DeepsStatus, String)>) -> DeepsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DeepsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DeepsStatus::Panic
        }
    }
}

fn core<T>(r: deeps_core::Result<T>) -> Result<T, (DeepsStatus, String)> {
    r.map_err(|e| (core_status(&e), e.to_string()))
}

fn null(what: &str) -> (DeepsStatus, String) {
    (DeepsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DeepsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            DeepsStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn deeps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn deeps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a JSON experiment configuration. `"{}"` gives the defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn deeps_config_from_json(
    json: *const c_char,
    out: *mut *mut DeepsConfig,
) -> DeepsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let inner = core(ExperimentConfig::from_json(text))?;
        *out = Box::into_raw(Box::new(DeepsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from `deeps_config_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn deeps_config_free(cfg: *mut DeepsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn deeps_config_set_seed(cfg: *mut DeepsConfig, seed: u64) -> DeepsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.inner.master_seed = seed;
        Ok(())
    })
}

/// Selects the strategy for `deeps_run`. `ssim_threshold` is ignored for
/// `DEEPS_STRATEGY_RANDOM`.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn deeps_config_set_strategy(
    cfg: *mut DeepsConfig,
    strategy: u32,
    ssim_threshold: f64,
) -> DeepsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let spec = match strategy {
            DEEPS_STRATEGY_DEEPS => StrategySpec::Deeps { ssim_threshold },
            DEEPS_STRATEGY_RANDOM => StrategySpec::Random,
            DEEPS_STRATEGY_ORACLE => StrategySpec::Oracle { ssim_threshold },
            other => {
                return Err((
                    DeepsStatus::InvalidArgument,
                    format!("unknown strategy {other}"),
                ));
            }
        };
        let mut next = cfg.inner.clone();
        next.strategy = spec;
        next.validate()
            .map_err(|e| (DeepsStatus::InvalidArgument, e.to_string()))?;
        cfg.inner = next;
        Ok(())
    })
}

/// Runs the configured strategy. `threads` = 0 uses the default pool.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn deeps_run(
    cfg: *const DeepsConfig,
    threads: u32,
    out: *mut *mut DeepsSummary,
) -> DeepsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let threads = (threads > 0).then_some(threads as usize);
        let inner = core(core(with_threads(threads, || run_experiment(&cfg.inner)))?)?;
        *out = Box::into_raw(Box::new(DeepsSummary { inner }));
        Ok(())
    })
}

/// # Safety
/// `summary` must come from `deeps_run` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn deeps_summary_free(summary: *mut DeepsSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// Number of executed rounds, 0 for a null handle.
///
/// # Safety
/// `summary` must be null or a live summary handle.
#[no_mangle]
pub unsafe extern "C" fn deeps_summary_round_count(summary: *const DeepsSummary) -> usize {
    summary.as_ref().map_or(0, |s| s.inner.records.len())
}

/// Copies round `index` (0-based) into `out`.
///
/// # Safety
/// `summary` must be a live summary handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn deeps_summary_round(
    summary: *const DeepsSummary,
    index: usize,
    out: *mut DeepsRound,
) -> DeepsStatus {
    guard(|| {
        let s = summary.as_ref().ok_or_else(|| null("summary"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = s.inner.records.get(index).ok_or_else(|| {
            (
                DeepsStatus::OutOfRange,
                format!(
                    "round index {index} out of range (have {})",
                    s.inner.records.len()
                ),
            )
        })?;
        *out = DeepsRound {
            round_k: r.round_k as u64,
            accuracy: r.global_accuracy,
            loss: r.global_loss,
            duration_s: r.round_duration_s,
            cohort_energy_j: r.cohort_energy_j,
            cohort_size: r.selected_ids.len() as u64,
            alive_uavs: r.alive_uavs as u64,
            dropouts: r.dropouts as u64,
        };
        Ok(())
    })
}

/// # Safety
/// `summary` must be a live summary handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn deeps_summary_metrics(
    summary: *const DeepsSummary,
    out: *mut DeepsMetrics,
) -> DeepsStatus {
    guard(|| {
        let s = &summary.as_ref().ok_or_else(|| null("summary"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = DeepsMetrics {
            avg_round_time_s: s.avg_round_time_s,
            rounds_to_convergence: s.rounds_to_convergence.unwrap_or(0) as u64,
            time_to_convergence_min: s.time_to_convergence_min.unwrap_or(f64::NAN),
            final_accuracy: s.final_accuracy,
            final_loss: s.final_loss,
            total_cohort_energy_j: s.total_cohort_energy_j(),
            rounds: s.records.len() as u64,
            stopped_early: s.stopped_early.is_some(),
        };
        Ok(())
    })
}

/// Writes the per-round CSV to `path`.
///
/// # Safety
/// `summary` must be a live summary handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn deeps_summary_write_csv(
    summary: *const DeepsSummary,
    path: *const c_char,
) -> DeepsStatus {
    guard(|| {
        let s = summary.as_ref().ok_or_else(|| null("summary"))?;
        let path = str_arg(path, "path")?;
        core(emit_csv(&s.inner.records, Path::new(path)))
    })
}

/// SSIM of two 8-bit grayscale images of `width * height` pixels each.
///
/// # Safety
/// `a` and `b` must each point to `width * height` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn deeps_ssim(
    a: *const u8,
    b: *const u8,
    width: u32,
    height: u32,
    out: *mut f64,
) -> DeepsStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("image"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let n = width as usize * height as usize;
        let img = |p: *const u8| {
            core(GrayImage::new(
                width,
                height,
                std::slice::from_raw_parts(p, n).to_vec(),
            ))
        };
        *out = core(ssim_pair(&img(a)?, &img(b)?, &SsimParams::default()))?;
        Ok(())
    })
}
