//! C interface to the extraction model.
//!
//! Every fallible function returns an [`RtseStatus`]. On failure a message is
//! kept per thread and read with [`rtse_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use roomtse::audio::Waveform;
use roomtse::dataset::QueryClue;
use roomtse::model::{load_checkpoint, TseModel};
use roomtse::Error;

/// Opaque model handle.
pub struct RtseModel {
    inner: TseModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingClue = 3,
    Io = 4,
    Checkpoint = 5,
    Numeric = 6,
    Panic = 7,
}

/// Conditioning values. Set a field to NaN when the model's clue set does
/// not use it.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RtseClue {
    /// Query distance in metres.
    pub d_q: f64,
    /// Microphone-wall distances x, Lx-x, y, Ly-y, z, Lz-z in metres.
    pub dis_mw: [f64; 6],
    /// Reverberation time in seconds.
    pub rt60: f64,
}

/// Bit set in [`rtse_model_clue_mask`] when the model reads `dis_mw`.
pub const RTSE_CLUE_DIM: u32 = 1;
/// Bit set in [`rtse_model_clue_mask`] when the model reads `rt60`.
pub const RTSE_CLUE_RT: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> RtseStatus {
    match e {
        Error::MissingClue(_) => RtseStatus::MissingClue,
        Error::Io(_) | Error::Wav(_) | Error::MissingFile(_) => RtseStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => RtseStatus::Checkpoint,
        Error::Numeric(_) => RtseStatus::Numeric,
        _ => RtseStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RtseStatus, String)>) -> RtseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RtseStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RtseStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (RtseStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RtseStatus, String) {
    (RtseStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null when the last
/// call succeeded. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rtse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rtse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a handle to release with
/// [`rtse_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rtse_model_load(path: *const c_char, out: *mut *mut RtseModel) -> RtseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RtseStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let ckpt = load_checkpoint(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RtseModel { inner: ckpt.model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`rtse_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rtse_model_free(model: *mut RtseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rtse_model_num_params(model: *const RtseModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_params())
}

/// Which room fields the model reads: a combination of [`RTSE_CLUE_DIM`]
/// and [`RTSE_CLUE_RT`].
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rtse_model_clue_mask(model: *const RtseModel) -> u32 {
    model.as_ref().map_or(0, |m| {
        let c = m.inner.config().clue_set;
        u32::from(c.uses_dim()) * RTSE_CLUE_DIM | u32::from(c.uses_rt()) * RTSE_CLUE_RT
    })
}

fn present(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

/// Extracts the speech at `clue` from a mono mixture of `len` samples at
/// `rate` Hz, writing `len` samples to `out`.
///
/// # Safety
/// `mixture` and `out` must each point to `len` doubles; `clue` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rtse_extract(
    model: *const RtseModel,
    mixture: *const f64,
    len: usize,
    rate: u32,
    clue: *const RtseClue,
    out: *mut f64,
) -> RtseStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let clue = clue.as_ref().ok_or_else(|| null("clue"))?;
        if mixture.is_null() {
            return Err(null("mixture"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let samples = std::slice::from_raw_parts(mixture, len).to_vec();
        let y = Waveform::new(samples, rate).map_err(lib_err)?;
        let dis_mw = if clue.dis_mw.iter().any(|v| v.is_nan()) { None } else { Some(clue.dis_mw) };
        let q = QueryClue::from_parts(present(clue.d_q), dis_mw, present(clue.rt60), model.inner.config().clue_set)
            .map_err(lib_err)?;
        let x = model.inner.forward(&y, &q).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(x.samples());
        Ok(())
    })
}
