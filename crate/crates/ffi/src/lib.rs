//! C interface to affectpipe.
//!
//! Every function returns an [`ApStatus`]. On failure the calling thread's
//! last error message is set and can be read with [`ap_last_error_message`].
//! Timelines and models are opaque handles released with their `_free`
//! function; strings returned through out-pointers are released with
//! [`ap_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use affectpipe::analysis::{pearson, welch_t};
use affectpipe::domain::{valid_affect_day_count, FeatureSchema, ParticipantTimeline};
use affectpipe::evaluation::roc_auc;
use affectpipe::impute::impute_all;
use affectpipe::ingest::{aggregate_day, IntradaySample};
use affectpipe::labeling::Label;
use affectpipe::learners::ParticipantModel;
use affectpipe::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Parse = 4,
    SchemaMismatch = 5,
    SingleClass = 6,
    InsufficientData = 7,
    /// The result is mathematically undefined, e.g. a constant input.
    Undefined = 8,
    Panic = 9,
}

/// Daily timeline of one participant.
pub struct ApTimeline(ParticipantTimeline);

/// Trained per-participant model.
pub struct ApModel(ParticipantModel);

struct Failure(ApStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Json(_) | Error::Csv(_) | Error::Parse { .. } => ApStatus::Parse,
            Error::SchemaMismatch { .. }
            | Error::Schema(_)
            | Error::UnknownFeature(_)
            | Error::ModalityMismatch { .. } => ApStatus::SchemaMismatch,
            Error::SingleClass => ApStatus::SingleClass,
            Error::InsufficientLabels(_) => ApStatus::InsufficientData,
            _ => ApStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(ApStatus::Parse, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn call(f: impl FnOnce() -> Result<(), Failure>) -> ApStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ApStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            ApStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ApStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(ApStatus::InvalidUtf8, format!("`{what}`: {e}")))
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

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(ApStatus::InvalidInput, e.to_string()))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a timeline JSON document.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_timeline_from_json(json: *const c_char, out: *mut *mut ApTimeline) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        let t: ParticipantTimeline = serde_json::from_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(ApTimeline(t)));
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ap_timeline_free(t: *mut ApTimeline) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Serializes a timeline; release the result with `ap_string_free`.
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_timeline_to_json(t: *const ApTimeline, out: *mut *mut c_char) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(handle(t, "timeline")?.0.to_json())?;
        Ok(())
    })
}

/// Number of calendar days in the timeline.
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_timeline_len(t: *const ApTimeline, out: *mut usize) -> ApStatus {
    call(|| {
        *out_arg(out, "out")? = handle(t, "timeline")?.0.len();
        Ok(())
    })
}

/// Days with a fully answered affect report.
///
/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_timeline_valid_affect_days(t: *const ApTimeline, out: *mut usize) -> ApStatus {
    call(|| {
        *out_arg(out, "out")? = valid_affect_day_count(&handle(t, "timeline")?.0);
        Ok(())
    })
}

/// Window-imputes every schema feature into a new timeline. A null
/// `schema_json` uses the built-in schema.
///
/// # Safety
/// `t` must be a live handle; `schema_json` null or nul-terminated; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_timeline_impute(
    t: *const ApTimeline,
    schema_json: *const c_char,
    out: *mut *mut ApTimeline,
) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        let t = handle(t, "timeline")?;
        let schema = if schema_json.is_null() {
            FeatureSchema::default_schema()
        } else {
            FeatureSchema::from_json(str_arg(schema_json, "schema_json")?)?
        };
        *out = Box::into_raw(Box::new(ApTimeline(impute_all(&t.0, &schema))));
        Ok(())
    })
}

/// Parses a participant model JSON document.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_model_from_json(json: *const c_char, out: *mut *mut ApModel) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        let m: ParticipantModel = serde_json::from_str(str_arg(json, "json")?)?;
        if m.feature_ids.len() != m.model.n_features() {
            return Err(Error::SchemaMismatch {
                expected: m.model.n_features(),
                found: m.feature_ids.len(),
            }
            .into());
        }
        *out = Box::into_raw(Box::new(ApModel(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ap_model_free(m: *mut ApModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Width of the rows the model expects.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_model_n_features(m: *const ApModel, out: *mut usize) -> ApStatus {
    call(|| {
        *out_arg(out, "out")? = handle(m, "model")?.0.model.n_features();
        Ok(())
    })
}

/// Probability of the High class for one raw (unstandardized) row.
///
/// # Safety
/// `row` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_model_predict_proba(
    m: *const ApModel,
    row: *const f64,
    len: usize,
    out: *mut f64,
) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        *out = handle(m, "model")?.0.model.predict_proba(slice_arg(row, len, "row")?)?;
        Ok(())
    })
}

/// Area under the ROC curve. `labels[i]` is nonzero for High.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        let s = slice_arg(scores, n, "scores")?;
        let l = slice_arg(labels, n, "labels")?;
        let pairs: Vec<(f64, Label)> = s
            .iter()
            .zip(l)
            .map(|(&v, &c)| (v, if c != 0 { Label::High } else { Label::Low }))
            .collect();
        *out = roc_auc(&pairs)?.auc;
        Ok(())
    })
}

/// Welch's two-sample t statistic, degrees of freedom and two-sided p-value.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_welch_t(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out_t: *mut f64,
    out_df: *mut f64,
    out_p: *mut f64,
) -> ApStatus {
    call(|| {
        let (ot, odf, op) = (out_arg(out_t, "out_t")?, out_arg(out_df, "out_df")?, out_arg(out_p, "out_p")?);
        let w = welch_t(slice_arg(a, na, "a")?, slice_arg(b, nb, "b")?)?;
        (*ot, *odf, *op) = (w.t, w.df, w.p_value);
        Ok(())
    })
}

/// Pearson correlation. Returns `Undefined` when either input is constant
/// or there are too few pairs.
///
/// # Safety
/// `x` and `y` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        match pearson(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)? {
            Some(r) => {
                *out = r;
                Ok(())
            }
            None => Err(Failure(ApStatus::Undefined, "correlation is undefined".into())),
        }
    })
}

/// Duration-weighted daily value from intraday samples. Returns `Undefined`
/// for an empty day.
///
/// # Safety
/// `values` and `durations` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ap_aggregate_day(
    values: *const f64,
    durations: *const f64,
    n: usize,
    out: *mut f64,
) -> ApStatus {
    call(|| {
        let out = out_arg(out, "out")?;
        let v = slice_arg(values, n, "values")?;
        let d = slice_arg(durations, n, "durations")?;
        if let Some(bad) = d.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
            return Err(Failure(ApStatus::InvalidInput, format!("duration {bad} is not positive")));
        }
        let samples: Vec<IntradaySample> = v
            .iter()
            .zip(d)
            .map(|(&value, &duration_min)| IntradaySample {
                feature_id: String::new(),
                value,
                duration_min,
            })
            .collect();
        match aggregate_day(&samples) {
            Some(x) => {
                *out = x;
                Ok(())
            }
            None => Err(Failure(ApStatus::Undefined, "no samples".into())),
        }
    })
}
