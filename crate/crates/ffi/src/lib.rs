//! C ABI over the omnipred toolkit.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns an
//! [`OmniStatus`]; on failure [`omni_last_error`] describes the error for the
//! calling thread. Strings returned to the caller are freed with
//! [`omni_string_free`].

use omnipred::audit::{audit, AuditKind, AuditSpec};
use omnipred::model::{Dataset, HypothesisClass, Predictor};
use omnipred::tasks::TaskSpec;
use omnipred::trainer::{train, TrainConfig};
use omnipred::verify::{verify_omni, FamilyKind, VerifyConfig};
use omnipred::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status of a call; `OMNI_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmniStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Input = 3,
    Parse = 4,
    Spec = 5,
    Contract = 6,
    MissingCell = 7,
    RateUndefined = 8,
    NonConvergence = 9,
    Infeasible = 10,
    Budget = 11,
    Io = 12,
    Json = 13,
    Panic = 14,
}

impl From<&Error> for OmniStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Input(_) => OmniStatus::Input,
            Error::Parse { .. } => OmniStatus::Parse,
            Error::Spec(_) => OmniStatus::Spec,
            Error::Contract(_) => OmniStatus::Contract,
            Error::MissingCell { .. } => OmniStatus::MissingCell,
            Error::RateUndefined(_) => OmniStatus::RateUndefined,
            Error::NonConvergence { .. } => OmniStatus::NonConvergence,
            Error::Infeasible(_) => OmniStatus::Infeasible,
            Error::Budget { .. } => OmniStatus::Budget,
            Error::Io(_) => OmniStatus::Io,
            Error::Json(_) => OmniStatus::Json,
        }
    }
}

/// Labelled, weighted, grouped samples.
pub struct OmniDataset {
    inner: Dataset,
}

/// A predictor on the value grid.
pub struct OmniPredictor {
    inner: Predictor,
}

/// A finite hypothesis class.
pub struct OmniHypotheses {
    inner: HypothesisClass,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OmniStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(OmniStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OmniStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OmniStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OmniStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(OmniStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(OmniStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(OmniStatus::NullArgument, format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(OmniStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn parse_kinds(text: &str) -> Result<Vec<AuditKind>, Failure> {
    text.split(',').map(|k| k.trim().parse::<AuditKind>().map_err(Failure::from)).collect()
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn omni_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn omni_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a dataset CSV (`xid, f0..fk, group, label[, weight]`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omni_dataset_read_csv(path: *const c_char, out: *mut *mut OmniDataset) -> OmniStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let inner = Dataset::read_csv(path)?;
        *out = Box::into_raw(Box::new(OmniDataset { inner }));
        Ok(())
    })
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn omni_dataset_len(d: *const OmniDataset) -> usize {
    d.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of groups, 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn omni_dataset_groups(d: *const OmniDataset) -> usize {
    d.as_ref().map_or(0, |d| d.inner.t())
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn omni_dataset_free(d: *mut OmniDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Parses a predictor from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omni_predictor_from_json(json: *const c_char, out: *mut *mut OmniPredictor) -> OmniStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        out_arg(out, "out")?;
        let inner = Predictor::from_json(text)?;
        *out = Box::into_raw(Box::new(OmniPredictor { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omni_predictor_read_json(path: *const c_char, out: *mut *mut OmniPredictor) -> OmniStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let inner = Predictor::read_json(path)?;
        *out = Box::into_raw(Box::new(OmniPredictor { inner }));
        Ok(())
    })
}

/// Serializes a predictor; free the result with [`omni_string_free`].
///
/// # Safety
/// `p` must be a live predictor handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omni_predictor_to_json(p: *const OmniPredictor, out: *mut *mut c_char) -> OmniStatus {
    guard(|| {
        let p = ref_arg(p, "predictor")?;
        out_arg(out, "out")?;
        *out = into_c_string(p.inner.to_json()?);
        Ok(())
    })
}

/// Writes `p(x)` for every sample of `d` into `values`, which holds `len` doubles.
///
/// # Safety
/// Handles must be live and `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn omni_predictor_evaluate(
    p: *const OmniPredictor,
    d: *const OmniDataset,
    values: *mut f64,
    len: usize,
) -> OmniStatus {
    guard(|| {
        let p = ref_arg(p, "predictor")?;
        let d = ref_arg(d, "dataset")?;
        out_arg(values, "values")?;
        if len < d.inner.len() {
            return Err(Failure(
                OmniStatus::Input,
                format!("buffer holds {len} values, dataset has {}", d.inner.len()),
            ));
        }
        let v = p.inner.evaluate_dataset(&d.inner)?;
        std::slice::from_raw_parts_mut(values, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn omni_predictor_free(p: *mut OmniPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omni_hypotheses_read_json(path: *const c_char, out: *mut *mut OmniHypotheses) -> OmniStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let inner = HypothesisClass::read_json(path)?;
        *out = Box::into_raw(Box::new(OmniHypotheses { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live hypotheses handle.
#[no_mangle]
pub unsafe extern "C" fn omni_hypotheses_len(h: *const OmniHypotheses) -> usize {
    h.as_ref().map_or(0, |h| h.inner.len())
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn omni_hypotheses_free(h: *mut OmniHypotheses) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Audit violation of `p` on `d` for `kind` (e.g. `"grpmc"`). `h` may be null
/// for calibration kinds. `action_grid` (length `grid_len`, may be null) gives
/// the level values for `"grplma"`.
///
/// # Safety
/// Handles must be live or null where allowed; `action_grid` must hold `grid_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn omni_audit(
    p: *const OmniPredictor,
    d: *const OmniDataset,
    kind: *const c_char,
    h: *const OmniHypotheses,
    action_grid: *const f64,
    grid_len: usize,
    out_violation: *mut f64,
) -> OmniStatus {
    guard(|| {
        let p = ref_arg(p, "predictor")?;
        let d = ref_arg(d, "dataset")?;
        let kind: AuditKind = str_arg(kind, "kind")?.parse()?;
        out_arg(out_violation, "out_violation")?;
        let h = h.as_ref().map(|h| h.inner.clone()).unwrap_or_default();
        let grid = if action_grid.is_null() { vec![] } else { std::slice::from_raw_parts(action_grid, grid_len).to_vec() };
        let spec = match kind {
            AuditKind::GrpLma => AuditSpec::level_set(kind, h, grid),
            k if k.uses_hypotheses() => AuditSpec::new(k, h),
            k => AuditSpec::calibration(k),
        };
        *out_violation = audit(&p.inner, &d.inner, &spec)?.total_violation;
        Ok(())
    })
}

/// Trains a predictor passing every audit in `kinds` (comma-separated) at `eps`.
/// On `OMNI_STATUS_NON_CONVERGENCE`, `out` still receives the best predictor found.
///
/// # Safety
/// Handles must be live (`h` may be null) and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omni_train(
    d: *const OmniDataset,
    h: *const OmniHypotheses,
    kinds: *const c_char,
    eps: f64,
    seed: u64,
    out: *mut *mut OmniPredictor,
) -> OmniStatus {
    guard(|| {
        let d = ref_arg(d, "dataset")?;
        let kinds = parse_kinds(str_arg(kinds, "kinds")?)?;
        out_arg(out, "out")?;
        let h = h.as_ref().map(|h| h.inner.clone()).unwrap_or_default();
        let mut cfg = TrainConfig::new(kinds, eps);
        cfg.seed = seed;
        match train(&d.inner, &h, &cfg) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(OmniPredictor { inner }));
                Ok(())
            }
            Err(Error::NonConvergence { best, violation, iterations }) => {
                *out = Box::into_raw(Box::new(OmniPredictor { inner: *best }));
                Err(Failure(
                    OmniStatus::NonConvergence,
                    format!("training did not converge: best violation {violation} after {iterations} updates"),
                ))
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Runs the omniprediction check for the tasks in `tasks_json` (one task object
/// or an array) and returns the reports as a JSON array in `out_json`.
///
/// # Safety
/// Handles must be live, strings NUL-terminated and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omni_verify(
    p: *const OmniPredictor,
    d: *const OmniDataset,
    c_class: *const OmniHypotheses,
    tasks_json: *const c_char,
    eps: f64,
    randomized: bool,
    out_json: *mut *mut c_char,
) -> OmniStatus {
    guard(|| {
        let p = ref_arg(p, "predictor")?;
        let d = ref_arg(d, "dataset")?;
        let c = ref_arg(c_class, "c_class")?;
        let text = str_arg(tasks_json, "tasks_json")?;
        out_arg(out_json, "out_json")?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(Error::from)?;
        let specs: Vec<TaskSpec> = match value {
            serde_json::Value::Array(items) => items
                .into_iter()
                .map(serde_json::from_value)
                .collect::<Result<_, _>>()
                .map_err(Error::from)?,
            other => vec![serde_json::from_value(other).map_err(Error::from)?],
        };
        let tasks = specs
            .iter()
            .map(|s| s.resolve_on(&d.inner, &p.inner))
            .collect::<Result<Vec<_>, _>>()?;
        let family = if randomized { FamilyKind::Randomized } else { FamilyKind::Deterministic };
        let reports = verify_omni(&p.inner, &tasks, &c.inner, &d.inner, &VerifyConfig::new(eps, family))?;
        *out_json = into_c_string(serde_json::to_string(&reports).map_err(Error::from)?);
        Ok(())
    })
}
