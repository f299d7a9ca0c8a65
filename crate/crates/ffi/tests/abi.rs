use std::ffi::{c_char, CStr, CString};
use std::ptr;

use bbvi_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { bbvi_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
    assert_eq!(s.len(), n);
    s
}

fn model(name: &str) -> *mut BbviModel {
    let name = CString::new(name).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { bbvi_model_new(name.as_ptr(), &mut m) }, BbviStatus::Ok);
    m
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(bbvi_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn unknown_model_sets_error() {
    let name = CString::new("nosuch").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { bbvi_model_new(name.as_ptr(), &mut m) }, BbviStatus::UnknownModel);
    assert!(m.is_null());
    assert!(last_error().contains("nosuch"));
    assert!(bbvi_last_error_length() > 0);
    assert_eq!(unsafe { bbvi_model_new(ptr::null(), &mut m) }, BbviStatus::NullPointer);
}

#[test]
fn log_joint_gradient_matches_differences() {
    let m = model("correlated_gaussian");
    let d = unsafe { bbvi_model_dim(m) };
    assert_eq!(d, 4);
    let z = vec![0.3; d];
    let (mut v, mut g) = (0.0, vec![0.0; d]);
    assert_eq!(unsafe { bbvi_model_log_joint(m, z.as_ptr(), d, &mut v, g.as_mut_ptr()) }, BbviStatus::Ok);
    let mut v2 = 0.0;
    assert_eq!(unsafe { bbvi_model_log_joint(m, z.as_ptr(), d, &mut v2, ptr::null_mut()) }, BbviStatus::Ok);
    assert_eq!(v, v2);
    // Central differences on the value.
    for i in 0..d {
        let h = 1e-6;
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp[i] += h;
        zm[i] -= h;
        let (mut fp, mut fm) = (0.0, 0.0);
        unsafe {
            bbvi_model_log_joint(m, zp.as_ptr(), d, &mut fp, ptr::null_mut());
            bbvi_model_log_joint(m, zm.as_ptr(), d, &mut fm, ptr::null_mut());
        }
        assert!(((fp - fm) / (2.0 * h) - g[i]).abs() < 1e-6);
    }
    assert_eq!(unsafe { bbvi_model_oracle_evals(m) }, 2 + 2 * d as u64);
    assert_eq!(unsafe { bbvi_model_log_joint(m, z.as_ptr(), 3, &mut v, ptr::null_mut()) }, BbviStatus::InvalidArgument);
    let mut ev = 0.0;
    assert_eq!(unsafe { bbvi_model_analytic_evidence(m, &mut ev) }, BbviStatus::Ok);
    assert!((ev + 3.0).abs() < 1e-12);
    unsafe { bbvi_model_free(m) };

    let f = model("logistic_regression");
    assert_eq!(unsafe { bbvi_model_analytic_evidence(f, &mut ev) }, BbviStatus::Unsupported);
    unsafe { bbvi_model_free(f) };
}

#[test]
fn run_evaluate_sample_and_checkpoint() {
    let m = model("conjugate_regression");
    let preset = CString::new("m1").unwrap();
    let mut p = ptr::null_mut();
    let mut report = BbviReport::default();
    let status = unsafe { bbvi_run_preset(m, preset.as_ptr(), 3, 300, 20, 2000, &mut p, &mut report) };
    assert_eq!(status, BbviStatus::Ok, "{}", last_error());
    assert!(!p.is_null() && !report.diverged);
    let mut ev = 0.0;
    unsafe { bbvi_model_analytic_evidence(m, &mut ev) };
    // A full-rank Gaussian is exact here, so the ELBO is close to the evidence.
    assert!(report.estimate <= ev + 5.0 * report.std_error && report.estimate > ev - 0.05, "{report:?} vs {ev}");
    assert_eq!((report.m_sampling, report.copies), (1, 2000));

    let mut r2 = BbviReport::default();
    assert_eq!(unsafe { bbvi_evaluate(m, p, 3, 5, 2000, &mut r2) }, BbviStatus::Ok);
    assert_eq!((r2.m_sampling, r2.copies), (5, 400));

    let (len, d) = unsafe { (bbvi_params_len(p), bbvi_params_dim(p)) };
    assert_eq!(d, 2);
    let mut values = vec![0.0; len];
    assert_eq!(unsafe { bbvi_params_values(p, values.as_mut_ptr(), len) }, BbviStatus::Ok);
    let mut zs = vec![0.0; 3 * d];
    assert_eq!(unsafe { bbvi_params_sample(p, 1, 3, zs.as_mut_ptr()) }, BbviStatus::Ok);
    let mut lq = 0.0;
    assert_eq!(unsafe { bbvi_params_log_density(p, zs.as_ptr(), d, &mut lq) }, BbviStatus::Ok);
    assert!(lq.is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("q.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bbvi_params_save(p, path.as_ptr()) }, BbviStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { bbvi_params_load(path.as_ptr(), &mut back) }, BbviStatus::Ok);
    let mut again = vec![0.0; len];
    unsafe { bbvi_params_values(back, again.as_mut_ptr(), len) };
    assert_eq!(values, again);

    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { bbvi_params_load(missing.as_ptr(), &mut none) }, BbviStatus::Io);
    unsafe {
        bbvi_params_free(back);
        bbvi_params_free(p);
        bbvi_model_free(m);
    }
}

#[test]
fn bad_preset_and_arguments() {
    let m = model("funnel");
    let mut p = ptr::null_mut();
    let mut report = BbviReport::default();
    let bad = CString::new("m9").unwrap();
    assert_eq!(
        unsafe { bbvi_run_preset(m, bad.as_ptr(), 0, 10, 10, 10, &mut p, &mut report) },
        BbviStatus::UnknownPreset
    );
    let good = CString::new("m1").unwrap();
    assert_eq!(
        unsafe { bbvi_run_preset(m, good.as_ptr(), 0, 0, 10, 10, &mut p, &mut report) },
        BbviStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { bbvi_run_preset(ptr::null(), good.as_ptr(), 0, 10, 10, 10, &mut p, &mut report) },
        BbviStatus::NullPointer
    );
    assert!(p.is_null());
    unsafe { bbvi_model_free(m) };
}
