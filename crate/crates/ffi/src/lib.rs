//! C ABI over the verification harness.
//!
//! Reports are returned through opaque handles owned by the caller and
//! released with [`qcgeom_report_free`]. Every entry point returns a
//! [`QcgeomStatus`]; the message of the last failure on the calling thread is
//! available from [`qcgeom_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use qcgeom::models::ModelKind;
use qcgeom::verify::{self, CheckParams, CheckReport, REGISTRY};
use qcgeom::QcError;

/// Status codes of every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcgeomStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    UnknownCheck = 3,
    UnknownModel = 4,
    UnsupportedModel = 5,
    InvalidParameter = 6,
    OutOfRange = 7,
    Numerical = 8,
    Panic = 9,
}

/// Run parameters; `has_lambda` and `has_tolerance` select the optional fields.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcgeomParams {
    pub n: usize,
    pub has_lambda: bool,
    pub lambda: f64,
    pub samples: usize,
    pub seed: u64,
    pub fd_step: f64,
    pub has_tolerance: bool,
    pub tolerance: f64,
}

impl From<&QcgeomParams> for CheckParams {
    fn from(p: &QcgeomParams) -> Self {
        CheckParams {
            n: p.n,
            lambda: p.has_lambda.then_some(p.lambda),
            samples: p.samples,
            seed: p.seed,
            fd_step: p.fd_step,
            tolerance: p.has_tolerance.then_some(p.tolerance),
        }
    }
}

/// Opaque result of one check run.
pub struct QcgeomReport {
    report: CheckReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn fail(status: QcgeomStatus, msg: &str) -> QcgeomStatus {
    set_error(msg);
    status
}

fn status_of(e: &QcError) -> QcgeomStatus {
    match e {
        QcError::UnknownCheck(_) => QcgeomStatus::UnknownCheck,
        QcError::UnsupportedModel { .. } | QcError::Unsupported(_) => {
            QcgeomStatus::UnsupportedModel
        }
        QcError::InvalidParameter(_) | QcError::DimensionMismatch { .. } => {
            QcgeomStatus::InvalidParameter
        }
        _ => QcgeomStatus::Numerical,
    }
}

fn guarded(f: impl FnOnce() -> QcgeomStatus) -> QcgeomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(QcgeomStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, QcgeomStatus> {
    if p.is_null() {
        return Err(fail(QcgeomStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(QcgeomStatus::InvalidUtf8, &format!("{what} is not UTF-8")))
}

unsafe fn report_arg<'a>(r: *const QcgeomReport) -> Result<&'a CheckReport, QcgeomStatus> {
    r.as_ref()
        .map(|h| &h.report)
        .ok_or_else(|| fail(QcgeomStatus::NullPointer, "report handle is null"))
}

fn static_strings(items: impl Iterator<Item = String>) -> Vec<CString> {
    items
        .map(|s| CString::new(s).expect("registry names contain no NUL"))
        .collect()
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn qcgeom_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).expect("version has no NUL"))
        .as_ptr()
}

/// Message of the last failure on this thread, or null. Valid until the next call that fails.
#[no_mangle]
pub extern "C" fn qcgeom_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Number of registered checks.
#[no_mangle]
pub extern "C" fn qcgeom_check_count() -> usize {
    REGISTRY.len()
}

/// Name of check `index` in static storage, or null when out of range.
#[no_mangle]
pub extern "C" fn qcgeom_check_name(index: usize) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    NAMES
        .get_or_init(|| static_strings(REGISTRY.iter().map(|c| c.name.to_string())))
        .get(index)
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Fills `out` with the harness defaults.
///
/// # Safety
/// `out` must be null or point to writable memory for one `QcgeomParams`.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_params_default(out: *mut QcgeomParams) -> QcgeomStatus {
    if out.is_null() {
        return fail(QcgeomStatus::NullPointer, "params output is null");
    }
    let d = CheckParams::default();
    out.write(QcgeomParams {
        n: d.n,
        has_lambda: d.lambda.is_some(),
        lambda: d.lambda.unwrap_or(0.0),
        samples: d.samples,
        seed: d.seed,
        fd_step: d.fd_step,
        has_tolerance: d.tolerance.is_some(),
        tolerance: d.tolerance.unwrap_or(0.0),
    });
    QcgeomStatus::Ok
}

/// Runs check `name` on `model` and stores a new report handle in `out`.
///
/// # Safety
/// `name` and `model` must be null or NUL-terminated strings, `params` null or
/// a valid pointer, and `out` null or writable for one pointer.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_run_check(
    name: *const c_char,
    model: *const c_char,
    params: *const QcgeomParams,
    out: *mut *mut QcgeomReport,
) -> QcgeomStatus {
    guarded(|| {
        if out.is_null() {
            return fail(QcgeomStatus::NullPointer, "report output is null");
        }
        out.write(ptr::null_mut());
        let name = match str_arg(name, "check name") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let model = match str_arg(model, "model name") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let Some(params) = params.as_ref() else {
            return fail(QcgeomStatus::NullPointer, "params is null");
        };
        let kind = match model.parse::<ModelKind>() {
            Ok(k) => k,
            Err(e) => return fail(QcgeomStatus::UnknownModel, &e.to_string()),
        };
        match verify::run_check(name, kind, &params.into()) {
            Ok(report) => {
                out.write(Box::into_raw(Box::new(QcgeomReport { report })));
                QcgeomStatus::Ok
            }
            Err(e) => fail(status_of(&e), &e.to_string()),
        }
    })
}

/// Releases a report handle; null is ignored.
///
/// # Safety
/// `report` must be null or a handle from [`qcgeom_run_check`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_report_free(report: *mut QcgeomReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be null or a live handle; `passed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_report_passed(
    report: *const QcgeomReport,
    passed: *mut bool,
) -> QcgeomStatus {
    write_field(report, passed, |r| r.passed)
}

/// # Safety
/// `report` must be null or a live handle; `value` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_report_max_residual(
    report: *const QcgeomReport,
    value: *mut f64,
) -> QcgeomStatus {
    write_field(report, value, |r| r.max_residual)
}

/// # Safety
/// `report` must be null or a live handle; `value` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_report_tolerance(
    report: *const QcgeomReport,
    value: *mut f64,
) -> QcgeomStatus {
    write_field(report, value, |r| r.tolerance)
}

/// Number of evaluated points.
///
/// # Safety
/// `report` must be null or a live handle; `count` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_report_point_count(
    report: *const QcgeomReport,
    count: *mut usize,
) -> QcgeomStatus {
    write_field(report, count, |r| r.points.len())
}

/// Residual of point `index`.
///
/// # Safety
/// `report` must be null or a live handle; `value` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_report_point_residual(
    report: *const QcgeomReport,
    index: usize,
    value: *mut f64,
) -> QcgeomStatus {
    let r = match report_arg(report) {
        Ok(r) => r,
        Err(s) => return s,
    };
    let Some(p) = r.points.get(index) else {
        return fail(
            QcgeomStatus::OutOfRange,
            &format!("point {index} of {}", r.points.len()),
        );
    };
    write_out(value, p.residual)
}

/// Serializes the report as JSON into a new string released with [`qcgeom_string_free`].
///
/// # Safety
/// `report` must be null or a live handle; `json` null or writable for one pointer.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_report_json(
    report: *const QcgeomReport,
    json: *mut *mut c_char,
) -> QcgeomStatus {
    guarded(|| {
        let r = match report_arg(report) {
            Ok(r) => r,
            Err(s) => return s,
        };
        let text = CString::new(r.to_json()).expect("JSON contains no NUL");
        write_out(json, text.into_raw())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must be null or a string from [`qcgeom_report_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qcgeom_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> QcgeomStatus {
    if out.is_null() {
        return fail(QcgeomStatus::NullPointer, "output pointer is null");
    }
    out.write(value);
    QcgeomStatus::Ok
}

unsafe fn write_field<T>(
    report: *const QcgeomReport,
    out: *mut T,
    get: impl FnOnce(&CheckReport) -> T,
) -> QcgeomStatus {
    match report_arg(report) {
        Ok(r) => write_out(out, get(r)),
        Err(s) => s,
    }
}
