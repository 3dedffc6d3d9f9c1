//! C interface to `hankel-pgd`.
//!
//! Every function returns an [`HpgdStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`hpgd_last_error`]. Objects are
//! passed around as opaque handles that the caller releases with the matching
//! `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hankel_pgd::problem::ProblemInstance;
use hankel_pgd::solver::{MuPolicy, StepPolicy, StopRule};
use hankel_pgd::{Error, HankelShape, PgdConfig, SampleMode, SampleSet, SolveResult, Termination};
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HpgdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidShape = 2,
    DimensionMismatch = 3,
    InvalidSampling = 4,
    InvalidArgument = 5,
    InvalidJson = 6,
    SvdNotConverged = 7,
    DegenerateInput = 8,
    BufferTooSmall = 9,
    Runtime = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HpgdTermination {
    TolX = 0,
    TolF = 1,
    MaxIters = 2,
    Diverged = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HpgdSampleMode {
    WithoutReplacement = 0,
    WithReplacement = 1,
}

/// Solver settings. Obtain one from `hpgd_config_default` and edit fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HpgdConfig {
    pub rank: usize,
    pub lambda: f64,
    pub eps0: f64,
    /// Incoherence bound; zero or negative picks it from the initial factors.
    pub mu: f64,
    /// First trial step; zero or negative uses the default rule.
    pub initial_step: f64,
    pub shrink: f64,
    pub c_ls: f64,
    pub max_trials: usize,
    pub backtracking: bool,
    /// Zero disables the test.
    pub tol_x: f64,
    /// Zero disables the test.
    pub tol_f: f64,
    pub max_iters: usize,
    pub max_stalls: usize,
    pub seed: u64,
}

pub struct HpgdShape(HankelShape);

pub struct HpgdSamples(SampleSet);

pub struct HpgdResult(SolveResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> HpgdStatus {
    match err {
        Error::InvalidShape(_) | Error::SizeGuard { .. } => HpgdStatus::InvalidShape,
        Error::DimensionMismatch { .. } => HpgdStatus::DimensionMismatch,
        Error::InvalidSampling(_) => HpgdStatus::InvalidSampling,
        Error::Validation(_) | Error::InfeasibleSeparation { .. } => HpgdStatus::InvalidArgument,
        Error::Json(_) | Error::Toml(_) => HpgdStatus::InvalidJson,
        Error::SvdNotConverged { .. } => HpgdStatus::SvdNotConverged,
        Error::DegenerateInput(_) | Error::UndefinedMetric(_) => HpgdStatus::DegenerateInput,
        _ => HpgdStatus::Runtime,
    }
}

fn fail(status: HpgdStatus, msg: impl Into<String>) -> HpgdStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, records errors and turns panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), HpgdStatus>) -> HpgdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HpgdStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(HpgdStatus::Panic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, HpgdStatus>;
}

impl<T> OrStatus<T> for hankel_pgd::Result<T> {
    fn or_status(self) -> Result<T, HpgdStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], HpgdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(HpgdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, HpgdStatus> {
    p.as_ref()
        .ok_or_else(|| fail(HpgdStatus::NullPointer, format!("{what} handle is null")))
}

fn out_arg<T>(out: *mut T) -> Result<(), HpgdStatus> {
    if out.is_null() {
        Err(fail(HpgdStatus::NullPointer, "output pointer is null"))
    } else {
        Ok(())
    }
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn hpgd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn hpgd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn hpgd_config_default(rank: usize) -> HpgdConfig {
    let c = PgdConfig::with_rank(rank);
    HpgdConfig {
        rank,
        lambda: c.lambda,
        eps0: c.eps0,
        mu: 0.0,
        initial_step: 0.0,
        shrink: c.step.shrink,
        c_ls: c.step.c_ls,
        max_trials: c.step.max_trials,
        backtracking: c.step.backtracking,
        tol_x: c.stop.tol_x,
        tol_f: c.stop.tol_f,
        max_iters: c.stop.max_iters,
        max_stalls: c.stop.max_stalls,
        seed: c.seed,
    }
}

impl From<&HpgdConfig> for PgdConfig {
    fn from(c: &HpgdConfig) -> Self {
        PgdConfig {
            rank: c.rank,
            lambda: c.lambda,
            eps0: c.eps0,
            mu: if c.mu > 0.0 { MuPolicy::Fixed(c.mu) } else { MuPolicy::Auto },
            step: StepPolicy {
                initial: (c.initial_step > 0.0).then_some(c.initial_step),
                shrink: c.shrink,
                c_ls: c.c_ls,
                max_trials: c.max_trials,
                backtracking: c.backtracking,
                ..StepPolicy::default()
            },
            stop: StopRule {
                tol_x: c.tol_x,
                tol_f: c.tol_f,
                max_iters: c.max_iters,
                max_stalls: c.max_stalls,
            },
            seed: c.seed,
            ..PgdConfig::default()
        }
    }
}

/// Creates a grid shape. `pencil` may be NULL for the default (about half of
/// each axis); otherwise it holds `ndims` pencil sizes.
///
/// # Safety
/// `dims` (and `pencil` when non-null) must point to `ndims` readable values.
#[no_mangle]
pub unsafe extern "C" fn hpgd_shape_new(
    dims: *const usize,
    pencil: *const usize,
    ndims: usize,
    out: *mut *mut HpgdShape,
) -> HpgdStatus {
    guard(|| {
        out_arg(out)?;
        let dims = slice_arg(dims, ndims, "dims")?;
        let pencil = if pencil.is_null() { None } else { Some(slice_arg(pencil, ndims, "pencil")?) };
        let shape = HankelShape::new(dims, pencil).or_status()?;
        *out = Box::into_raw(Box::new(HpgdShape(shape)));
        Ok(())
    })
}

/// Number of grid points, or 0 for a null handle.
///
/// # Safety
/// `shape` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpgd_shape_len(shape: *const HpgdShape) -> usize {
    shape.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `shape` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hpgd_shape_free(shape: *mut HpgdShape) {
    if !shape.is_null() {
        drop(Box::from_raw(shape));
    }
}

/// Builds a sample set from explicit 0-based row-major indices.
///
/// # Safety
/// `indices` must point to `m` readable values.
#[no_mangle]
pub unsafe extern "C" fn hpgd_samples_new(
    n: usize,
    indices: *const usize,
    m: usize,
    mode: HpgdSampleMode,
    out: *mut *mut HpgdSamples,
) -> HpgdStatus {
    guard(|| {
        out_arg(out)?;
        let idx = slice_arg(indices, m, "indices")?.to_vec();
        let set = SampleSet::from_indices(n, idx, mode.into()).or_status()?;
        *out = Box::into_raw(Box::new(HpgdSamples(set)));
        Ok(())
    })
}

/// Draws `m` indices out of `n` with the given seed.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hpgd_samples_draw(
    n: usize,
    m: usize,
    mode: HpgdSampleMode,
    seed: u64,
    out: *mut *mut HpgdSamples,
) -> HpgdStatus {
    guard(|| {
        out_arg(out)?;
        let set = SampleSet::draw(n, m, mode.into(), seed).or_status()?;
        *out = Box::into_raw(Box::new(HpgdSamples(set)));
        Ok(())
    })
}

/// Number of draws `m`, or 0 for a null handle.
///
/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpgd_samples_count(samples: *const HpgdSamples) -> usize {
    samples.as_ref().map_or(0, |s| s.0.m())
}

/// Copies the drawn indices into `buf`, which must hold at least `m` values.
///
/// # Safety
/// `buf` must point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn hpgd_samples_indices(
    samples: *const HpgdSamples,
    buf: *mut usize,
    cap: usize,
) -> HpgdStatus {
    guard(|| {
        let s = handle(samples, "samples")?;
        let idx = s.0.indices();
        if cap < idx.len() {
            return Err(fail(
                HpgdStatus::BufferTooSmall,
                format!("index buffer holds {cap} values, {} needed", idx.len()),
            ));
        }
        if !idx.is_empty() {
            out_arg(buf)?;
            ptr::copy_nonoverlapping(idx.as_ptr(), buf, idx.len());
        }
        Ok(())
    })
}

/// # Safety
/// `samples` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hpgd_samples_free(samples: *mut HpgdSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}

impl From<HpgdSampleMode> for SampleMode {
    fn from(m: HpgdSampleMode) -> Self {
        match m {
            HpgdSampleMode::WithoutReplacement => SampleMode::WithoutReplacement,
            HpgdSampleMode::WithReplacement => SampleMode::WithReplacement,
        }
    }
}

/// Recovers a signal from its samples. `obs_re` and `obs_im` hold the full
/// grid (`len` equals the shape length); unsampled entries are ignored.
/// `config` may be NULL for defaults at rank 1.
///
/// # Safety
/// Handles must be live; the arrays must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn hpgd_solve(
    shape: *const HpgdShape,
    samples: *const HpgdSamples,
    obs_re: *const f64,
    obs_im: *const f64,
    len: usize,
    config: *const HpgdConfig,
    out: *mut *mut HpgdResult,
) -> HpgdStatus {
    guard(|| {
        out_arg(out)?;
        let shape = handle(shape, "shape")?;
        let samples = handle(samples, "samples")?;
        let re = slice_arg(obs_re, len, "obs_re")?;
        let im = slice_arg(obs_im, len, "obs_im")?;
        let cfg = match config.as_ref() {
            Some(c) => PgdConfig::from(c),
            None => PgdConfig::default(),
        };
        let full: Vec<Complex64> = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let x_obs = samples.0.project(&full).or_status()?;
        let result = hankel_pgd::solve(&shape.0, &samples.0, &x_obs, &cfg, None).or_status()?;
        *out = Box::into_raw(Box::new(HpgdResult(result)));
        Ok(())
    })
}

/// Length of the recovered signal, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpgd_result_len(result: *const HpgdResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.x_rec.len())
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpgd_result_iterations(result: *const HpgdResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.iterations)
}

/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hpgd_result_termination(
    result: *const HpgdResult,
    out: *mut HpgdTermination,
) -> HpgdStatus {
    guard(|| {
        out_arg(out)?;
        let r = handle(result, "result")?;
        *out = match r.0.termination {
            Termination::TolX => HpgdTermination::TolX,
            Termination::TolF => HpgdTermination::TolF,
            Termination::MaxIters => HpgdTermination::MaxIters,
            Termination::Diverged => HpgdTermination::Diverged,
        };
        Ok(())
    })
}

/// Final objective value, or NaN when no iteration ran.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpgd_result_objective(result: *const HpgdResult) -> f64 {
    result
        .as_ref()
        .and_then(|r| r.0.history.last())
        .map_or(f64::NAN, |h| h.objective)
}

/// Copies the recovered signal into `re` and `im`, each of capacity `cap`.
///
/// # Safety
/// `re` and `im` must point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn hpgd_result_copy(
    result: *const HpgdResult,
    re: *mut f64,
    im: *mut f64,
    cap: usize,
) -> HpgdStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let x = &r.0.x_rec;
        if cap < x.len() {
            return Err(fail(
                HpgdStatus::BufferTooSmall,
                format!("output buffers hold {cap} values, {} needed", x.len()),
            ));
        }
        out_arg(re)?;
        out_arg(im)?;
        for (i, z) in x.iter().enumerate() {
            *re.add(i) = z.re;
            *im.add(i) = z.im;
        }
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hpgd_result_free(result: *mut HpgdResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Solves a problem given as JSON (the format read by `hankel-pgd recover
/// --input`) and writes the JSON answer to `*out`. Release it with
/// `hpgd_string_free`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hpgd_solve_json(json: *const c_char, out: *mut *mut c_char) -> HpgdStatus {
    guard(|| {
        out_arg(out)?;
        if json.is_null() {
            return Err(fail(HpgdStatus::NullPointer, "json is null"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| fail(HpgdStatus::InvalidJson, format!("input is not UTF-8: {e}")))?;
        let inst = ProblemInstance::from_json(text).or_status()?;
        let (_, mut report) = inst.solve().or_status()?;
        report.history = None;
        let answer = serde_json::to_string(&report).map_err(|e| fail(HpgdStatus::Runtime, e.to_string()))?;
        *out = CString::new(answer).map_err(|e| fail(HpgdStatus::Runtime, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hpgd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
