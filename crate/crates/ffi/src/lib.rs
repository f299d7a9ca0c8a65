//! C ABI for `bbvi`.
//!
//! Models and trained parameters are opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible function
//! returns a [`BbviStatus`]; on failure a description is available from
//! [`bbvi_last_error_message`] on the same thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bbvi::bench::{run_preset, MethodPreset, RunConfig};
use bbvi::families::{read_checkpoint, write_checkpoint, FamilyParams};
use bbvi::inference::{evaluate, EvalReport};
use bbvi::rng::{self, role};
use bbvi::targets::{model_by_name, TargetModel};
use bbvi::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbviStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownModel = 3,
    UnknownPreset = 4,
    Unsupported = 5,
    Diverged = 6,
    LaplaceFailure = 7,
    Io = 8,
    Panic = 9,
}

/// A target density.
pub struct BbviModel(TargetModel);

/// Parameters of a variational family.
pub struct BbviParams(FamilyParams);

/// Summary of a final bound evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BbviReport {
    /// Bound estimate in nats; NaN if the run diverged.
    pub estimate: f64,
    pub std_error: f64,
    /// Importance samples per copy (1 for the plain ELBO).
    pub m_sampling: usize,
    pub copies: usize,
    pub oracle_evals: usize,
    pub diverged: bool,
}

impl From<&EvalReport> for BbviReport {
    fn from(r: &EvalReport) -> Self {
        Self {
            estimate: r.estimate,
            std_error: r.std_error,
            m_sampling: r.m_sampling,
            copies: r.copies,
            oracle_evals: r.oracle_evals,
            diverged: !r.estimate.is_finite(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: impl std::fmt::Display) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string().into_bytes());
}

fn status_of(err: &Error) -> BbviStatus {
    match err {
        Error::UnknownModel { .. } => BbviStatus::UnknownModel,
        Error::UnknownPreset { .. } => BbviStatus::UnknownPreset,
        Error::UnsupportedFamily(_) => BbviStatus::Unsupported,
        Error::AllDiverged | Error::NonFiniteTarget { .. } => BbviStatus::Diverged,
        Error::LaplaceFailure(_) => BbviStatus::LaplaceFailure,
        Error::Io(_) | Error::Checkpoint(_) => BbviStatus::Io,
        _ => BbviStatus::InvalidArgument,
    }
}

/// Runs `body`, recording any error or panic.
fn guard(body: impl FnOnce() -> Result<(), (BbviStatus, String)>) -> BbviStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BbviStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BbviStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (BbviStatus, String)>;
}

impl<T> OrStatus<T> for bbvi::Result<T> {
    fn or_status(self) -> Result<T, (BbviStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (BbviStatus, String) {
    (BbviStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (BbviStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BbviStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (BbviStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (BbviStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), (BbviStatus, String)> {
    if got == want {
        Ok(())
    } else {
        Err((BbviStatus::InvalidArgument, format!("{what} has length {got}, expected {want}")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bbvi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL.
#[no_mangle]
pub extern "C" fn bbvi_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message on this thread into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the number of bytes written,
/// excluding the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn bbvi_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let n = msg.len().min(len - 1);
        ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
        n
    })
}

/// Looks up a built-in model by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbvi_model_new(name: *const c_char, out: *mut *mut BbviModel) -> BbviStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = model_by_name(str_arg(name, "name")?).or_status()?;
        *out = Box::into_raw(Box::new(BbviModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`bbvi_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bbvi_model_free(model: *mut BbviModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Dimension of the unconstrained parameter space, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bbvi_model_dim(model: *const BbviModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Number of `log p` evaluations made through this handle so far.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bbvi_model_oracle_evals(model: *const BbviModel) -> u64 {
    model.as_ref().map_or(0, |m| m.0.oracle_evals())
}

/// Writes the exact `log p(x)` to `out` if the model has one; returns
/// `Unsupported` otherwise.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbvi_model_analytic_evidence(model: *const BbviModel, out: *mut f64) -> BbviStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model
            .0
            .analytic_evidence()
            .ok_or_else(|| (BbviStatus::Unsupported, format!("{} has no closed-form evidence", model.0.name())))?;
        Ok(())
    })
}

/// `log p(z, x)` and, when `grad` is non-null, its gradient (length `dim`).
///
/// # Safety
/// `z` must hold `dim` values; `value` must be writable; `grad` must be
/// writable for `dim` values or null.
#[no_mangle]
pub unsafe extern "C" fn bbvi_model_log_joint(
    model: *const BbviModel,
    z: *const f64,
    dim: usize,
    value: *mut f64,
    grad: *mut f64,
) -> BbviStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let value = value.as_mut().ok_or_else(|| null("value"))?;
        check_len(dim, model.0.dim(), "z")?;
        let z = slice_arg(z, dim, "z")?;
        *value = if grad.is_null() {
            model.0.log_joint(z).or_status()?
        } else {
            model.0.log_joint_and_grad(z, slice_out(grad, dim, "grad")?).or_status()?
        };
        Ok(())
    })
}

/// Trains `preset` on `model` and evaluates the result. On success `*params`
/// receives a new handle. If every optimization run diverged, returns
/// `Diverged`, sets `report->diverged` and leaves `*params` null.
///
/// # Safety
/// `model` must be a live handle, `preset` a NUL-terminated string, `params`
/// and `report` writable.
#[no_mangle]
pub unsafe extern "C" fn bbvi_run_preset(
    model: *const BbviModel,
    preset: *const c_char,
    seed: u64,
    iters: usize,
    budget: usize,
    n_eval: usize,
    params: *mut *mut BbviParams,
    report: *mut BbviReport,
) -> BbviStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let report = report.as_mut().ok_or_else(|| null("report"))?;
        if params.is_null() {
            return Err(null("params"));
        }
        *params = ptr::null_mut();
        if iters == 0 || budget == 0 || n_eval == 0 {
            return Err((BbviStatus::InvalidArgument, "iters, budget and n_eval must be positive".into()));
        }
        let preset = MethodPreset::by_name(str_arg(preset, "preset")?).or_status()?;
        let run = run_preset(&preset, &model.0, seed, &RunConfig { iters, budget, n_eval }).or_status()?;
        *report = run.report.as_ref().map(BbviReport::from).unwrap_or(BbviReport {
            estimate: f64::NAN,
            std_error: f64::NAN,
            m_sampling: preset.m_sampling,
            diverged: true,
            ..BbviReport::default()
        });
        match run.params {
            Some(p) if !run.diverged => {
                *params = Box::into_raw(Box::new(BbviParams(p)));
                Ok(())
            }
            _ => Err((BbviStatus::Diverged, format!("{} diverged on {}", preset.name, model.0.name()))),
        }
    })
}

/// Bound estimate from `n` fresh samples in copies of `m` (`m = 1` is the
/// ELBO), drawn from the evaluation stream of `seed`.
///
/// # Safety
/// Handles must be live; `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbvi_evaluate(
    model: *const BbviModel,
    params: *const BbviParams,
    seed: u64,
    m: usize,
    n: usize,
    report: *mut BbviReport,
) -> BbviStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let report = report.as_mut().ok_or_else(|| null("report"))?;
        let r = evaluate(&model.0, &params.0, &mut rng::stream(seed, role::EVAL), m, n).or_status()?;
        *report = BbviReport::from(&r);
        Ok(())
    })
}

/// # Safety
/// `params` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_free(params: *mut BbviParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Number of parameters, 0 for a null handle.
///
/// # Safety
/// `params` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_len(params: *const BbviParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.len())
}

/// Dimension of the samples, 0 for a null handle.
///
/// # Safety
/// `params` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_dim(params: *const BbviParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.dim())
}

/// Copies the flat parameter vector into `out` (length `len`, which must
/// equal [`bbvi_params_len`]).
///
/// # Safety
/// `out` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_values(params: *const BbviParams, out: *mut f64, len: usize) -> BbviStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        check_len(len, params.0.len(), "out")?;
        slice_out(out, len, "out")?.copy_from_slice(params.0.values());
        Ok(())
    })
}

/// Draws `n` samples into `out` (row-major, `n * dim` values).
///
/// # Safety
/// `out` must be writable for `n * dim` values.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_sample(
    params: *const BbviParams,
    seed: u64,
    n: usize,
    out: *mut f64,
) -> BbviStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let out = slice_out(out, n * params.0.dim(), "out")?;
        let eps = params.0.draw_noise(n, &mut rng::stream(seed, role::EVAL));
        out.copy_from_slice(&params.0.forward(&eps).or_status()?.z);
        Ok(())
    })
}

/// `log q(z)` for one point of length `dim`.
///
/// # Safety
/// `z` must hold `dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_log_density(
    params: *const BbviParams,
    z: *const f64,
    dim: usize,
    out: *mut f64,
) -> BbviStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        check_len(dim, params.0.dim(), "z")?;
        *out = params.0.log_density(slice_arg(z, dim, "z")?).or_status()?;
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_save(params: *const BbviParams, path: *const c_char) -> BbviStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let file = File::create(str_arg(path, "path")?).map_err(|e| (BbviStatus::Io, e.to_string()))?;
        write_checkpoint(&params.0, BufWriter::new(file)).or_status()
    })
}

/// Reads a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbvi_params_load(path: *const c_char, out: *mut *mut BbviParams) -> BbviStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let file = File::open(str_arg(path, "path")?).map_err(|e| (BbviStatus::Io, e.to_string()))?;
        let params = read_checkpoint(BufReader::new(file)).or_status()?;
        *out = Box::into_raw(Box::new(BbviParams(params)));
        Ok(())
    })
}
