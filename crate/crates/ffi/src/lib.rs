//! C interface to trained essay-scoring models.
//!
//! Every function returns a [`CoattnStatus`]. On failure a description is
//! kept per thread and can be fetched with [`coattn_last_error_message`].
//! Strings passed in must be NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use coattn::error::ErrorClass;
use coattn::evaluation::qwk;
use coattn::run::LoadedModel;
use coattn::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoattnStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration or an unreadable or incompatible checkpoint.
    ConfigError = 3,
    /// Bad input data: missing files, empty essays, out-of-range ratings.
    DataError = 4,
    /// A computation produced a non-finite value or mismatched shapes.
    NumericError = 5,
    /// The output buffer is too small; the needed length was written.
    BufferTooSmall = 6,
    /// An internal invariant failed.
    InternalError = 7,
}

/// A loaded checkpoint. Opaque to C.
pub struct CoattnModel {
    inner: LoadedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CoattnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.class() {
            ErrorClass::Config => CoattnStatus::ConfigError,
            ErrorClass::Data => CoattnStatus::DataError,
            ErrorClass::Numeric => CoattnStatus::NumericError,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `body`, turning errors and panics into a status plus a stored message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CoattnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CoattnStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            CoattnStatus::InternalError
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CoattnStatus::NullArgument, format!("{what} is null"))
}

/// # Safety
/// `p` is null or points to a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CoattnStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `model` is null or was returned by [`coattn_model_load`] and not freed.
unsafe fn model<'a>(model: *const CoattnModel) -> Result<&'a LoadedModel, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

/// Loads a checkpoint file and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coattn_model_load(path: *const c_char, out: *mut *mut CoattnModel) -> CoattnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = text(path, "path")?;
        let inner = LoadedModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(CoattnModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` is null or a handle from [`coattn_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coattn_model_free(model: *mut CoattnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Lowest and highest score the model can return.
///
/// # Safety
/// `model` must be a live handle; `min` and `max` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn coattn_model_score_range(
    model: *const CoattnModel,
    min: *mut i64,
    max: *mut i64,
) -> CoattnStatus {
    guard(|| {
        let m = self::model(model)?;
        if min.is_null() || max.is_null() {
            return Err(null("min or max"));
        }
        *min = m.scale().min();
        *max = m.scale().max();
        Ok(())
    })
}

/// Scores one essay against its source article.
///
/// # Safety
/// `model` must be a live handle, `essay` and `article` NUL-terminated
/// strings, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coattn_score(
    model: *const CoattnModel,
    essay: *const c_char,
    article: *const c_char,
    out: *mut i64,
) -> CoattnStatus {
    guard(|| {
        let m = self::model(model)?;
        let (essay, article) = (text(essay, "essay")?, text(article, "article")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.score(essay, article)?;
        Ok(())
    })
}

/// Writes one attention weight per essay sentence, in document order, into
/// `weights[0..capacity]` and the sentence count into `*len`. If
/// `capacity` is smaller than the count, nothing is written to `weights`
/// and the status is `BufferTooSmall`.
///
/// # Safety
/// `model` must be a live handle, `essay` and `article` NUL-terminated
/// strings, `len` a valid pointer and `weights` valid for `capacity`
/// doubles (it may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn coattn_attention(
    model: *const CoattnModel,
    essay: *const c_char,
    article: *const c_char,
    weights: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> CoattnStatus {
    guard(|| {
        let m = self::model(model)?;
        let (essay, article) = (text(essay, "essay")?, text(article, "article")?);
        if len.is_null() {
            return Err(null("len"));
        }
        let rows = m.attention(essay, article)?;
        *len = rows.len();
        if capacity < rows.len() {
            return Err(Failure(
                CoattnStatus::BufferTooSmall,
                format!("{} weights do not fit in a buffer of {capacity}", rows.len()),
            ));
        }
        if weights.is_null() {
            return Err(null("weights"));
        }
        for (i, row) in rows.iter().enumerate() {
            *weights.add(i) = row.weight;
        }
        Ok(())
    })
}

/// Quadratic weighted kappa of `n` rating pairs in `[min, max]`.
///
/// # Safety
/// `gold` and `predicted` must be valid for `n` values and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn coattn_qwk(
    gold: *const i64,
    predicted: *const i64,
    n: usize,
    min: i64,
    max: i64,
    out: *mut f64,
) -> CoattnStatus {
    guard(|| {
        if gold.is_null() || predicted.is_null() || out.is_null() {
            return Err(null("gold, predicted or out"));
        }
        let gold = std::slice::from_raw_parts(gold, n);
        let predicted = std::slice::from_raw_parts(predicted, n);
        *out = qwk(gold, predicted, min, max)?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null if none. The
/// caller owns the string and releases it with [`coattn_string_free`].
#[no_mangle]
pub extern "C" fn coattn_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().clone().map_or(ptr::null_mut(), CString::into_raw))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or came from [`coattn_last_error_message`] and is not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coattn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
