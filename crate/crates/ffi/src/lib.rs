//! C ABI over the core crate: load a trained checkpoint, encode windows,
//! and apply the latent predictor from any language with a C FFI.
//!
//! Conventions:
//! - Every fallible call returns a [`KjStatus`]; `KJ_STATUS_OK` is zero.
//! - On failure the call stores a message retrievable with
//!   [`kj_last_error_message`]; the pointer stays valid until the next
//!   failing call on the same thread.
//! - Models are opaque handles created by [`kj_model_load`] and released
//!   with [`kj_model_free`]. A handle is immutable after load, so it may be
//!   shared across threads for concurrent encoding.
//! - All panics are caught at the boundary and reported as
//!   `KJ_STATUS_PANIC`; they never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use kjepa::config::ExperimentConfig;
use kjepa::models::{load_checkpoint, Model, TrainMode};
use kjepa::numerics::Tensor;
use kjepa::Error;

/// Result of every fallible call in this API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KjStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration text was rejected.
    ConfigError = 3,
    /// The call violated an API contract (wrong mode, bad argument).
    ContractError = 4,
    /// A buffer or tensor dimension did not match the model.
    DimensionError = 5,
    /// The checkpoint file was malformed.
    FormatError = 6,
    /// The checkpoint file could not be read.
    IoError = 7,
    /// A computation produced non-finite values.
    NumericError = 8,
    /// An internal panic was caught at the boundary.
    Panic = 9,
}

/// An immutable loaded model behind an opaque pointer.
pub struct KjModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    // Interior NULs cannot come from our error formatting, but degrade
    // gracefully rather than panicking inside the error path.
    let owned = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained a NUL byte").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn status_of(err: &Error) -> KjStatus {
    match err {
        Error::Dim(_) => KjStatus::DimensionError,
        Error::Contract(_) => KjStatus::ContractError,
        Error::Numeric(_) => KjStatus::NumericError,
        Error::Config(_) => KjStatus::ConfigError,
        Error::Format(_) => KjStatus::FormatError,
        Error::Io(_) => KjStatus::IoError,
    }
}

fn fail(err: &Error) -> KjStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn fail_with(status: KjStatus, message: &str) -> KjStatus {
    set_error(message);
    status
}

/// Runs `body` with panics converted to `KJ_STATUS_PANIC`.
fn guarded(body: impl FnOnce() -> KjStatus) -> KjStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail_with(KjStatus::Panic, "internal panic caught at the FFI boundary"),
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, KjStatus> {
    if ptr.is_null() {
        return Err(fail_with(KjStatus::NullArgument, &format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail_with(KjStatus::InvalidUtf8, &format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string; never freed by the
/// caller.
#[no_mangle]
pub extern "C" fn kj_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message describing the most recent failure on the calling thread, as a
/// NUL-terminated string.
///
/// The pointer stays valid until the next failing call on the same thread;
/// the caller must not free it. Before any failure it is the empty string.
#[no_mangle]
pub extern "C" fn kj_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a KJC1 checkpoint into a new model handle.
///
/// `config_text` is the experiment configuration (sectioned `key=value`
/// text; missing keys take their defaults) whose `[data]` and `[model]`
/// sections must describe the checkpointed architecture. `mode` is "jepa"
/// or "ae". On success `*out` owns the handle; release it with
/// [`kj_model_free`].
///
/// # Safety
/// `checkpoint_path`, `config_text`, and `mode` must be null or valid
/// NUL-terminated strings; `out` must be a valid pointer to writable
/// memory.
#[no_mangle]
pub unsafe extern "C" fn kj_model_load(
    checkpoint_path: *const c_char,
    config_text: *const c_char,
    mode: *const c_char,
    out: *mut *mut KjModel,
) -> KjStatus {
    guarded(|| {
        if out.is_null() {
            return fail_with(KjStatus::NullArgument, "out is null");
        }
        let path = match utf8_arg(checkpoint_path, "checkpoint_path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config_text = match utf8_arg(config_text, "config_text") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let mode = match utf8_arg(mode, "mode") {
            Ok(s) => s,
            Err(status) => return status,
        };

        let config = match ExperimentConfig::parse(config_text) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let mode: TrainMode = match mode.parse() {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        match load_checkpoint(Path::new(path), &config.model_config(), mode) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(KjModel { inner }));
                KjStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a handle returned by [`kj_model_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer obtained from [`kj_model_load`] that
/// has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn kj_model_free(model: *mut KjModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the latent vectors this model produces, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle from [`kj_model_load`].
#[no_mangle]
pub unsafe extern "C" fn kj_model_latent_dim(model: *const KjModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.config.latent_dim
}

/// Number of samples in the windows this model encodes, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle from [`kj_model_load`].
#[no_mangle]
pub unsafe extern "C" fn kj_model_input_len(model: *const KjModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.config.input_len
}

/// Encodes one window of `window_len` samples into `out` (length
/// `out_len`). `window_len` must equal the model's input length and
/// `out_len` its latent width.
///
/// # Safety
/// `model` must be a live handle; `window` must point to `window_len`
/// readable floats and `out` to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn kj_model_encode(
    model: *const KjModel,
    window: *const f32,
    window_len: usize,
    out: *mut f32,
    out_len: usize,
) -> KjStatus {
    guarded(|| {
        if model.is_null() || window.is_null() || out.is_null() {
            return fail_with(KjStatus::NullArgument, "model, window, and out must be non-null");
        }
        let model = &(*model).inner;
        if window_len != model.config.input_len {
            return fail_with(
                KjStatus::DimensionError,
                &format!(
                    "window_len {window_len} does not match model input length {}",
                    model.config.input_len
                ),
            );
        }
        if out_len != model.config.latent_dim {
            return fail_with(
                KjStatus::DimensionError,
                &format!(
                    "out_len {out_len} does not match latent width {}",
                    model.config.latent_dim
                ),
            );
        }
        let data = std::slice::from_raw_parts(window, window_len).to_vec();
        let x = match Tensor::new(vec![1, 1, window_len], data) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        match model.encode(&x) {
            Ok(z) => {
                std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(z.data());
                KjStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Applies the latent predictor to one latent vector. Fails with
/// `KJ_STATUS_CONTRACT_ERROR` on autoencoder models, which have no
/// predictor. `latent_len` and `out_len` must both equal the latent width.
///
/// # Safety
/// `model` must be a live handle; `latent` must point to `latent_len`
/// readable floats and `out` to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn kj_model_predict(
    model: *const KjModel,
    latent: *const f32,
    latent_len: usize,
    out: *mut f32,
    out_len: usize,
) -> KjStatus {
    guarded(|| {
        if model.is_null() || latent.is_null() || out.is_null() {
            return fail_with(KjStatus::NullArgument, "model, latent, and out must be non-null");
        }
        let model = &(*model).inner;
        let k = model.config.latent_dim;
        if latent_len != k || out_len != k {
            return fail_with(
                KjStatus::DimensionError,
                &format!("latent_len {latent_len} and out_len {out_len} must both be {k}"),
            );
        }
        if model.mode != TrainMode::Jepa {
            return fail_with(
                KjStatus::ContractError,
                "autoencoder checkpoints carry no predictor",
            );
        }
        let data = std::slice::from_raw_parts(latent, latent_len).to_vec();
        let z = match Tensor::new(vec![1, k], data) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        match model.predict(&z) {
            Ok(p) => {
                std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(p.data());
                KjStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
