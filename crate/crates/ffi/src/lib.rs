//! C ABI for loading trained `nusa` models and scoring samples.
//!
//! Every fallible function returns a [`NusaStatus`]; on failure a message
//! is available from [`nusa_last_error_message`] on the same thread.
//! Networks are opaque [`NusaNetwork`] handles released with
//! [`nusa_network_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nusa::linalg::{DenseMatrix, DenseVector, DEFAULT_RANK_TOL};
use nusa::network::Network;
use nusa::nusa::{detect, layer_nusa_score, NusaConfig};
use nusa::NusaError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NusaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    Unsupported = 7,
    Panic = 8,
}

/// Per-sample detection result.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NusaDetection {
    /// Aggregate NuSA score in [0, 1]; high means inlier-like.
    pub score: f64,
    pub predicted_class: usize,
    /// True when `score <= threshold`.
    pub is_outlier: bool,
}

/// A loaded network plus the scoring configuration.
pub struct NusaNetwork {
    net: Network,
    cfg: NusaConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &NusaError) -> NusaStatus {
    match err {
        NusaError::DimensionMismatch { .. } => NusaStatus::DimensionMismatch,
        NusaError::Io { .. } => NusaStatus::Io,
        NusaError::Json(_) | NusaError::Parse { .. } => NusaStatus::Parse,
        NusaError::Numeric(_) | NusaError::Degenerate(_) => NusaStatus::Numeric,
        NusaError::Unsupported(_) => NusaStatus::Unsupported,
        _ => NusaStatus::InvalidArgument,
    }
}

struct Failure(NusaStatus, String);

impl From<NusaError> for Failure {
    fn from(e: NusaError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NusaStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NusaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NusaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NusaStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NusaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn vector(p: *const f64, len: usize, what: &str) -> Result<DenseVector, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(DenseVector::new(
        std::slice::from_raw_parts(p, len).to_vec(),
    )?)
}

unsafe fn handle<'a>(net: *const NusaNetwork) -> Result<&'a NusaNetwork, Failure> {
    net.as_ref().ok_or_else(|| null("network"))
}

unsafe fn publish(net: Network, out: *mut *mut NusaNetwork) -> Result<(), Failure> {
    *out = Box::into_raw(Box::new(NusaNetwork {
        net,
        cfg: NusaConfig::default(),
    }));
    Ok(())
}

/// Parses a model JSON document into a new handle stored in `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_from_json(
    json: *const c_char,
    out: *mut *mut NusaNetwork,
) -> NusaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let net = Network::from_json(c_str(json, "json")?)?;
        publish(net, out)
    })
}

/// Loads a model JSON file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_load(
    path: *const c_char,
    out: *mut *mut NusaNetwork,
) -> NusaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let net = Network::load(Path::new(c_str(path, "path")?))?;
        publish(net, out)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_free(net: *mut NusaNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_input_dim(net: *const NusaNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.input_dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_num_classes(net: *const NusaNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.num_classes())
}

/// Class probabilities of `x` into `probs` (length `num_classes`) and the
/// arg-max class into `*class_out`. Either output may be null.
///
/// # Safety
/// `x` must hold `len` doubles and `probs` `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_predict(
    net: *const NusaNetwork,
    x: *const f64,
    len: usize,
    probs: *mut f64,
    probs_len: usize,
    class_out: *mut usize,
) -> NusaStatus {
    guard(|| {
        let h = handle(net)?;
        let (class, p) = h.net.predict(&vector(x, len, "x")?)?;
        if !probs.is_null() {
            if probs_len != p.dim() {
                return Err(NusaError::DimensionMismatch {
                    expected: p.dim(),
                    actual: probs_len,
                }
                .into());
            }
            std::slice::from_raw_parts_mut(probs, probs_len).copy_from_slice(p.as_slice());
        }
        if !class_out.is_null() {
            *class_out = class;
        }
        Ok(())
    })
}

/// Aggregate NuSA score of `x` into `*score_out`.
///
/// # Safety
/// `x` must hold `len` doubles and `score_out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_score(
    net: *const NusaNetwork,
    x: *const f64,
    len: usize,
    score_out: *mut f64,
) -> NusaStatus {
    guard(|| {
        if score_out.is_null() {
            return Err(null("score_out"));
        }
        let h = handle(net)?;
        *score_out =
            detect(&h.net, &vector(x, len, "x")?, f64::NEG_INFINITY, &h.cfg)?.aggregate_score;
        Ok(())
    })
}

/// Score, predicted class and outlier decision for `x` at `threshold`.
///
/// # Safety
/// `x` must hold `len` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nusa_network_detect(
    net: *const NusaNetwork,
    x: *const f64,
    len: usize,
    threshold: f64,
    out: *mut NusaDetection,
) -> NusaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if threshold.is_nan() {
            return Err(Failure(
                NusaStatus::InvalidArgument,
                "threshold is NaN".into(),
            ));
        }
        let h = handle(net)?;
        let r = detect(&h.net, &vector(x, len, "x")?, threshold, &h.cfg)?;
        *out = NusaDetection {
            score: r.aggregate_score,
            predicted_class: r.predicted_class,
            is_outlier: r.is_outlier,
        };
        Ok(())
    })
}

/// `‖P(W)x‖ / ‖x‖` for a row-major `rows × cols` matrix `w`.
///
/// # Safety
/// `w` must hold `rows * cols` doubles and `x` `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nusa_layer_score(
    w: *const f64,
    rows: usize,
    cols: usize,
    x: *const f64,
    len: usize,
    score_out: *mut f64,
) -> NusaStatus {
    guard(|| {
        if w.is_null() {
            return Err(null("w"));
        }
        if score_out.is_null() {
            return Err(null("score_out"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(NusaStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let m = DenseMatrix::new(rows, cols, std::slice::from_raw_parts(w, n).to_vec())?;
        *score_out = layer_nusa_score(&m, &vector(x, len, "x")?, DEFAULT_RANK_TOL)?;
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nusa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn nusa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
