//! C ABI over `encdec_ad`.
//!
//! Models and error models cross the boundary as opaque handles created by a
//! `*_load` function and released with the matching `*_free`. Every fallible
//! call returns an [`EadStatus`]; on failure [`ead_last_error`] holds a
//! message for the calling thread. Windows are row-major `rows × cols`
//! buffers of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use encdec_ad::data::{Label, Window};
use encdec_ad::detection;
use encdec_ad::lstm::{DecodeMode, EncDecModel};
use encdec_ad::numerics::Matrix;
use encdec_ad::scoring::{self, GaussianErrorModel};
use encdec_ad::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Parse = 5,
    Io = 6,
    Config = 7,
    Data = 8,
    Artifact = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EadDecodeMode {
    TeacherForced = 0,
    Autoregressive = 1,
}

impl From<EadDecodeMode> for DecodeMode {
    fn from(m: EadDecodeMode) -> Self {
        match m {
            EadDecodeMode::TeacherForced => DecodeMode::TeacherForced,
            EadDecodeMode::Autoregressive => DecodeMode::Autoregressive,
        }
    }
}

/// Trained encoder-decoder.
pub struct EadModel {
    inner: EncDecModel,
}

/// Gaussian fitted to reconstruction errors.
pub struct EadErrorModel {
    inner: GaussianErrorModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EadStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.category() {
            "dimension" => EadStatus::Dimension,
            "numerical" => EadStatus::Numerical,
            "parse" => EadStatus::Parse,
            "io" => EadStatus::Io,
            "config" => EadStatus::Config,
            "data" => EadStatus::Data,
            "artifact" => EadStatus::Artifact,
            _ => EadStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EadStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EadStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EadStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            EadStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model_ref<'a>(m: *const EadModel) -> Result<&'a EncDecModel, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn error_model_ref<'a>(g: *const EadErrorModel) -> Result<&'a GaussianErrorModel, Failure> {
    g.as_ref().map(|g| &g.inner).ok_or_else(|| null("error_model"))
}

unsafe fn window_arg(window: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    let n = rows.checked_mul(cols).ok_or_else(|| invalid("window size overflows"))?;
    let data = slice_arg(window, n, "window")?;
    Ok(Matrix::from_vec(rows, cols, data.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ead_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ead_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a model JSON file. On success `*out` owns a handle for [`ead_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ead_model_load(path: *const c_char, out: *mut *mut EadModel) -> EadStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = EncDecModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(EadModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ead_model_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ead_model_free(model: *mut EadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension `m`, hidden size `c` and window length `L`.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ead_model_dims(
    model: *const EadModel,
    m: *mut usize,
    c: *mut usize,
    window_length: *mut usize,
) -> EadStatus {
    guard(|| {
        let model = model_ref(model)?;
        *out_arg(m, "m")? = model.m;
        *out_arg(c, "c")? = model.c;
        *out_arg(window_length, "window_length")? = model.window_length;
        Ok(())
    })
}

/// Reconstructs a `rows × cols` window into `out` (same shape, original time order).
///
/// # Safety
/// `window` and `out` must each hold `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn ead_model_reconstruct(
    model: *const EadModel,
    window: *const f64,
    rows: usize,
    cols: usize,
    mode: EadDecodeMode,
    out: *mut f64,
) -> EadStatus {
    guard(|| {
        let model = model_ref(model)?;
        let w = window_arg(window, rows, cols)?;
        let r = model.reconstruct(&w, mode.into())?;
        slice_out(out, rows * cols, "out")?.copy_from_slice(r.values.as_slice());
        Ok(())
    })
}

/// Teacher-forced squared reconstruction error of one window.
///
/// # Safety
/// `window` must hold `rows * cols` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ead_model_window_loss(
    model: *const EadModel,
    window: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> EadStatus {
    guard(|| {
        let model = model_ref(model)?;
        let w = window_arg(window, rows, cols)?;
        *out_arg(out, "out")? = model.window_loss(&w)?;
        Ok(())
    })
}

/// Loads an error-model JSON file. On success `*out` owns a handle for
/// [`ead_error_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ead_error_model_load(path: *const c_char, out: *mut *mut EadErrorModel) -> EadStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = GaussianErrorModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(EadErrorModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `error_model` must come from [`ead_error_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ead_error_model_free(error_model: *mut EadErrorModel) {
    if !error_model.is_null() {
        drop(Box::from_raw(error_model));
    }
}

/// Dimension of the error vectors the model scores.
///
/// # Safety
/// `error_model` must be a live handle and `m` valid.
#[no_mangle]
pub unsafe extern "C" fn ead_error_model_dims(error_model: *const EadErrorModel, m: *mut usize) -> EadStatus {
    guard(|| {
        *out_arg(m, "m")? = error_model_ref(error_model)?.dims();
        Ok(())
    })
}

/// Anomaly score of one error vector of length `len`.
///
/// # Safety
/// `e` must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ead_score_error_vector(
    error_model: *const EadErrorModel,
    e: *const f64,
    len: usize,
    out: *mut f64,
) -> EadStatus {
    guard(|| {
        let gm = error_model_ref(error_model)?;
        let e = slice_arg(e, len, "e")?;
        *out_arg(out, "out")? = scoring::anomaly_score(gm, e)?;
        Ok(())
    })
}

/// Per-point anomaly scores of a `rows × cols` window, written to `out[rows]`.
///
/// # Safety
/// `window` must hold `rows * cols` doubles and `out` `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn ead_score_window(
    model: *const EadModel,
    error_model: *const EadErrorModel,
    window: *const f64,
    rows: usize,
    cols: usize,
    mode: EadDecodeMode,
    out: *mut f64,
) -> EadStatus {
    guard(|| {
        let model = model_ref(model)?;
        let gm = error_model_ref(error_model)?;
        let w = Window {
            id: 0,
            series_id: String::new(),
            start: 0,
            values: window_arg(window, rows, cols)?,
            label: Label::Normal,
        };
        let scores = scoring::score_windows(model, gm, std::slice::from_ref(&w), mode.into())?;
        slice_out(out, rows, "out")?.copy_from_slice(&scores.scores());
        Ok(())
    })
}

/// `F_β` from precision and recall; 0 when both are 0.
#[no_mangle]
pub extern "C" fn ead_f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    detection::f_beta(precision, recall, beta)
}

/// Threshold maximizing `F_β` over `n` labelled scores (`truth[i] != 0` is anomalous).
///
/// # Safety
/// `scores` and `truth` must hold `n` elements; `tau` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ead_threshold_supervised(
    scores: *const f64,
    truth: *const u8,
    n: usize,
    beta: f64,
    tau: *mut f64,
) -> EadStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let truth: Vec<bool> = slice_arg(truth, n, "truth")?.iter().map(|&t| t != 0).collect();
        *out_arg(tau, "tau")? = detection::select_threshold_supervised(scores, &truth, beta)?.tau;
        Ok(())
    })
}

/// Mean plus population standard deviation of `n` scores.
///
/// # Safety
/// `scores` must hold `n` doubles; `tau` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ead_threshold_unsupervised(scores: *const f64, n: usize, tau: *mut f64) -> EadStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        *out_arg(tau, "tau")? = detection::select_threshold_unsupervised(scores)?.tau;
        Ok(())
    })
}
