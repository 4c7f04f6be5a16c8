use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use qcgeom_ffi::*;

fn defaults() -> QcgeomParams {
    let mut p = std::mem::MaybeUninit::<QcgeomParams>::uninit();
    assert_eq!(
        unsafe { qcgeom_params_default(p.as_mut_ptr()) },
        QcgeomStatus::Ok
    );
    unsafe { p.assume_init() }
}

fn run(name: &str, model: &str, params: &QcgeomParams) -> (QcgeomStatus, *mut QcgeomReport) {
    let name = CString::new(name).unwrap();
    let model = CString::new(model).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { qcgeom_run_check(name.as_ptr(), model.as_ptr(), params, &mut out) };
    (status, out)
}

fn last_error() -> String {
    let p = qcgeom_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn registry_is_enumerable() {
    let count = qcgeom_check_count();
    assert_eq!(count, 18);
    let names: Vec<String> = (0..count)
        .map(|i| {
            unsafe { CStr::from_ptr(qcgeom_check_name(i)) }
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    assert!(names.iter().any(|n| n == "sphere-qc"));
    assert!(qcgeom_check_name(count).is_null());
    assert!(!unsafe { CStr::from_ptr(qcgeom_version()) }
        .to_bytes()
        .is_empty());
}

#[test]
fn report_accessors_match_the_json() {
    let mut params = defaults();
    params.n = 2;
    params.samples = 3;
    params.seed = 11;
    let (status, report) = run("sphere-qc", "flat-ball", &params);
    assert_eq!(status, QcgeomStatus::Ok);
    unsafe {
        let mut passed = false;
        let mut max = f64::NAN;
        let mut count = 0usize;
        assert_eq!(qcgeom_report_passed(report, &mut passed), QcgeomStatus::Ok);
        assert_eq!(
            qcgeom_report_max_residual(report, &mut max),
            QcgeomStatus::Ok
        );
        assert_eq!(
            qcgeom_report_point_count(report, &mut count),
            QcgeomStatus::Ok
        );
        assert!(passed);
        assert_eq!(count, 3);
        let mut worst = 0.0_f64;
        for i in 0..count {
            let mut r = 0.0;
            assert_eq!(
                qcgeom_report_point_residual(report, i, &mut r),
                QcgeomStatus::Ok
            );
            worst = worst.max(r);
        }
        assert_eq!(worst, max);
        let mut r = 0.0;
        assert_eq!(
            qcgeom_report_point_residual(report, count, &mut r),
            QcgeomStatus::OutOfRange
        );

        let mut json = ptr::null_mut();
        assert_eq!(qcgeom_report_json(report, &mut json), QcgeomStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        qcgeom_string_free(json);
        assert!(text.contains("\"check\": \"sphere-qc\""));
        assert!(text.contains("\"passed\": true"));
        qcgeom_report_free(report);
    }
}

#[test]
fn failures_map_to_status_codes() {
    let params = defaults();
    let (status, report) = run("unknown", "flat-ball", &params);
    assert_eq!(status, QcgeomStatus::UnknownCheck);
    assert!(report.is_null());
    assert!(last_error().contains("unknown"));

    assert_eq!(
        run("sphere-qc", "torus", &params).0,
        QcgeomStatus::UnknownModel
    );
    assert_eq!(
        run("alexandrov-qc", "flat-ball", &params).0,
        QcgeomStatus::UnsupportedModel
    );

    let mut bad = params;
    bad.fd_step = -1.0;
    assert_eq!(
        run("sphere-qc", "flat-ball", &bad).0,
        QcgeomStatus::InvalidParameter
    );

    let mut out = ptr::null_mut();
    let name = CString::new("sphere-qc").unwrap();
    let status = unsafe { qcgeom_run_check(name.as_ptr(), ptr::null(), &params, &mut out) };
    assert_eq!(status, QcgeomStatus::NullPointer);
    let mut passed = false;
    assert_eq!(
        unsafe { qcgeom_report_passed(ptr::null(), &mut passed) },
        QcgeomStatus::NullPointer
    );
    unsafe { qcgeom_report_free(ptr::null_mut()) };
}

#[test]
fn forced_tolerance_fails_the_report() {
    let mut params = defaults();
    params.samples = 2;
    params.has_tolerance = true;
    params.tolerance = 1e-20;
    let (status, report) = run("sphere-relation", "flat-ball", &params);
    assert_eq!(status, QcgeomStatus::Ok);
    let mut passed = true;
    unsafe {
        assert_eq!(qcgeom_report_passed(report, &mut passed), QcgeomStatus::Ok);
        qcgeom_report_free(report);
    }
    assert!(!passed);
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qcgeom.h");
    assert!(
        header.exists(),
        "build script did not write {}",
        header.display()
    );
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"qcgeom.h\"\n\
         int probe(void) {\n\
           QcgeomParams p;\n\
           QcgeomReport *r = 0;\n\
           if (qcgeom_params_default(&p) != QCGEOM_STATUS_OK) return 1;\n\
           QcgeomStatus s = qcgeom_run_check(\"sphere-qc\", \"flat-ball\", &p, &r);\n\
           qcgeom_report_free(r);\n\
           return (int)s;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
