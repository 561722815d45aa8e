use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mte_ffi::*;

fn last_error() -> String {
    let p = mte_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulated(n: usize, seed: u64) -> *mut MteSample {
    let preset = CString::new("separable").unwrap();
    let mut sample = ptr::null_mut();
    assert_eq!(unsafe { mte_simulate(preset.as_ptr(), n, seed, &mut sample) }, MteStatus::Ok);
    sample
}

#[test]
fn estimate_round_trip() {
    let sample = simulated(1500, 4);
    assert_eq!(unsafe { mte_sample_len(sample) }, 1500);
    let config = CString::new(r#"{"procedure": "both"}"#).unwrap();
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { mte_estimate(sample, config.as_ptr(), &mut est) }, MteStatus::Ok);

    let mut eff = MteEffects::default();
    assert_eq!(unsafe { mte_estimate_effects(est, MteProcedure::Separate, &mut eff) }, MteStatus::Ok);
    assert!((eff.pi_x * eff.tt + (1.0 - eff.pi_x) * eff.tut - eff.ate).abs() < 1e-10);
    assert_eq!((eff.late_lo, eff.late_hi), (0.25, 0.75));
    assert_eq!(unsafe { mte_estimate_effects(est, MteProcedure::Liv, &mut eff) }, MteStatus::Ok);

    let len = unsafe { mte_estimate_grid_len(est) };
    assert_eq!(len, 101);
    let (mut v, mut m) = (vec![0.0; len], vec![0.0; len]);
    let status = unsafe { mte_estimate_mte_curve(est, MteProcedure::Separate, v.as_mut_ptr(), m.as_mut_ptr(), len) };
    assert_eq!(status, MteStatus::Ok);
    assert!(v.windows(2).all(|w| w[0] < w[1]));
    assert!(m.iter().all(|x| x.is_finite()));

    let dim = unsafe { mte_estimate_dim(est) };
    assert_eq!(dim, 2);
    let mut coef = [[0.0; 2]; 3];
    for (k, which) in [MteCoefficients::Untreated, MteCoefficients::Treated, MteCoefficients::Difference]
        .into_iter()
        .enumerate()
    {
        let status =
            unsafe { mte_estimate_coefficients(est, MteProcedure::Separate, which, coef[k].as_mut_ptr(), dim) };
        assert_eq!(status, MteStatus::Ok);
    }
    let [untreated, treated, difference] = coef;
    for ((t, u), d) in treated.iter().zip(untreated).zip(difference) {
        assert!((t - u - d).abs() < 1e-12);
    }

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { mte_estimate_summary_json(est, &mut json) }, MteStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(parsed["separate"]["ate"]["estimate"].is_number());
    assert!(parsed["liv"]["delta"].is_array());
    unsafe {
        mte_string_free(json);
        mte_estimate_free(est);
        mte_sample_free(sample);
    }
}

#[test]
fn arrays_build_a_sample() {
    let n = 6;
    let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let d = [0u8, 1, 0, 1, 0, 1];
    let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let mut sample = ptr::null_mut();
    let status = unsafe { mte_sample_new(y.as_ptr(), d.as_ptr(), n, x.as_ptr(), 1, ptr::null(), 0, &mut sample) };
    assert_eq!(status, MteStatus::Ok);
    assert_eq!(unsafe { mte_sample_len(sample) }, 6);
    unsafe { mte_sample_free(sample) };

    let bad = [0u8, 2, 0, 1, 0, 1];
    let status = unsafe { mte_sample_new(y.as_ptr(), bad.as_ptr(), n, x.as_ptr(), 1, ptr::null(), 0, &mut sample) };
    assert_eq!(status, MteStatus::DataError);
    assert!(last_error().contains("row 1"));
}

#[test]
fn errors_are_reported() {
    let mut sample = ptr::null_mut();
    let status = unsafe { mte_simulate(ptr::null(), 10, 1, &mut sample) };
    assert_eq!(status, MteStatus::NullPointer);
    assert!(last_error().contains("preset"));

    let unknown = CString::new("nope").unwrap();
    assert_eq!(unsafe { mte_simulate(unknown.as_ptr(), 10, 1, &mut sample) }, MteStatus::InvalidArgument);
    assert!(last_error().contains("separable"));

    let sample = simulated(300, 2);
    let mut est = ptr::null_mut();
    let bad = CString::new(r#"{"bogus": true}"#).unwrap();
    assert_eq!(unsafe { mte_estimate(sample, bad.as_ptr(), &mut est) }, MteStatus::InvalidArgument);
    assert!(est.is_null());

    assert_eq!(unsafe { mte_estimate(sample, ptr::null(), &mut est) }, MteStatus::Ok);
    let mut eff = MteEffects::default();
    assert_eq!(unsafe { mte_estimate_effects(est, MteProcedure::Liv, &mut eff) }, MteStatus::InvalidArgument);
    let mut buf = [0.0; 3];
    let status = unsafe {
        mte_estimate_coefficients(est, MteProcedure::Separate, MteCoefficients::Treated, buf.as_mut_ptr(), 3)
    };
    assert_eq!(status, MteStatus::InvalidArgument);
    assert_eq!(unsafe { mte_estimate_effects(ptr::null(), MteProcedure::Separate, &mut eff) }, MteStatus::NullPointer);

    let missing = CString::new("/nonexistent/file.csv").unwrap();
    let columns = CString::new(r#"{"outcome": "y", "treatment": "d"}"#).unwrap();
    let mut loaded = ptr::null_mut();
    let status = unsafe { mte_sample_from_csv(missing.as_ptr(), columns.as_ptr(), &mut loaded) };
    assert_eq!(status, MteStatus::DataError);
    unsafe {
        mte_estimate_free(est);
        mte_sample_free(sample);
        mte_sample_free(ptr::null_mut());
    }
}

#[test]
fn csv_loading() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let rows: String = (0..40).map(|i| format!("{},{},{}\n", i as f64 * 0.5, i % 2, (i as f64).sin())).collect();
    std::fs::write(&path, format!("outcome,treat,x\n{rows}")).unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let columns = CString::new(r#"{"outcome": "outcome", "treatment": "treat", "continuous": ["x"]}"#).unwrap();
    let mut sample = ptr::null_mut();
    assert_eq!(unsafe { mte_sample_from_csv(p.as_ptr(), columns.as_ptr(), &mut sample) }, MteStatus::Ok);
    assert_eq!(unsafe { mte_sample_len(sample) }, 40);
    unsafe { mte_sample_free(sample) };

    let wrong = CString::new(r#"{"outcome": "nope", "treatment": "treat"}"#).unwrap();
    assert_eq!(unsafe { mte_sample_from_csv(p.as_ptr(), wrong.as_ptr(), &mut sample) }, MteStatus::DataError);
    assert_eq!(last_error(), "column not found: nope");
}

#[test]
fn header_declares_the_interface() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/mte.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "mte_last_error",
        "mte_sample_new",
        "mte_sample_from_csv",
        "mte_simulate",
        "mte_sample_free",
        "mte_estimate",
        "mte_estimate_effects",
        "mte_estimate_mte_curve",
        "mte_estimate_coefficients",
        "mte_estimate_summary_json",
        "mte_string_free",
        "typedef struct MteSample MteSample",
        "MTE_STATUS_OK = 0",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // compile the header as C when a compiler is available
    if let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).status() {
        assert!(status.success());
    }
}
