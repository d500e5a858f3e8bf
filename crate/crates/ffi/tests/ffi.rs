use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ratelim_ffi::*;

fn plant(a: &[f64], e: &[f64]) -> *mut RlPlant {
    let mut h = ptr::null_mut();
    let s = unsafe { rl_plant_new(a.as_ptr(), e.as_ptr(), a.len(), 1.0, &mut h) };
    assert_eq!(s, RlStatus::Ok);
    h
}

fn last_error() -> String {
    let p = rl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn bounds_match_core() {
    let h = plant(&[2.0], &[0.0]);
    let mut b = RlBounds::default();
    assert_eq!(unsafe { rl_bounds(h, 0.0, &mut b) }, RlStatus::Ok);
    assert!((b.r_nec - 1.0).abs() < 1e-15);
    assert!((b.p_nec - 0.25).abs() < 1e-15);
    assert!(b.feasible);
    assert_eq!(unsafe { rl_bounds(h, 0.3, &mut b) }, RlStatus::Ok);
    assert!(!b.feasible && b.r_nec.is_infinite());
    unsafe { rl_plant_free(h) };
}

#[test]
fn invalid_plant_reports_code_and_message() {
    let mut h = ptr::null_mut();
    let s = unsafe { rl_plant_new([1.5].as_ptr(), [0.6].as_ptr(), 1, 1.0, &mut h) };
    assert_eq!(s, RlStatus::InvalidPlant);
    assert!(h.is_null());
    assert!(last_error().contains("invalid plant"));
}

#[test]
fn null_pointers_are_rejected() {
    let mut h = ptr::null_mut();
    let s = unsafe { rl_plant_new(ptr::null(), [0.0].as_ptr(), 1, 1.0, &mut h) };
    assert_eq!(s, RlStatus::NullPointer);
    let s = unsafe { rl_bounds(ptr::null(), 0.0, ptr::null_mut()) };
    assert_eq!(s, RlStatus::NullPointer);
    assert!(last_error().contains("plant"));
    unsafe {
        rl_plant_free(ptr::null_mut());
        rl_report_free(ptr::null_mut());
        assert_eq!(rl_plant_order(ptr::null()), 0);
        assert_eq!(rl_report_len(ptr::null()), 0);
        assert!(rl_report_slope(ptr::null()).is_nan());
    }
}

#[test]
fn sufficiency_and_minimum_levels() {
    let h = plant(&[2.0], &[0.0]);
    let mut s = RlSufficiency::default();
    assert_eq!(unsafe { rl_sufficient(h, 4, 0.0, &mut s) }, RlStatus::Ok);
    assert!((s.rho - 0.25).abs() < 1e-12 && s.sufficient);
    assert_eq!(
        unsafe { rl_sufficient(h, 1, 0.0, &mut s) },
        RlStatus::InvalidArgument
    );

    let mut n = 0u64;
    let mut rho = 0.0;
    assert_eq!(
        unsafe { rl_min_sufficient_n(h, 0.0, 1 << 16, &mut n, &mut rho) },
        RlStatus::Ok
    );
    assert_eq!(n, 3);
    assert!(rho < 1.0);
    assert_eq!(
        unsafe { rl_min_sufficient_n(h, 0.3, 1 << 10, &mut n, ptr::null_mut()) },
        RlStatus::Ok
    );
    assert_eq!(n, 0);

    let mut r = 0.0;
    assert_eq!(
        unsafe { rl_min_sufficient_rate(h, 0.0, &mut r) },
        RlStatus::Ok
    );
    assert!((r - 1.0).abs() < 1e-8);
    assert_eq!(
        unsafe { rl_min_sufficient_rate(h, 0.3, &mut r) },
        RlStatus::Ok
    );
    assert!(r.is_infinite());
    unsafe { rl_plant_free(h) };
}

#[test]
fn higher_order_hits_dimension_cap() {
    let a = [0.0; 7].iter().chain(&[2.0]).copied().collect::<Vec<_>>();
    let h = plant(&a, &[0.0; 8]);
    let mut s = RlSufficiency::default();
    assert_eq!(
        unsafe { rl_sufficient(h, 4, 0.0, &mut s) },
        RlStatus::DimensionCap
    );
    unsafe { rl_plant_free(h) };
}

#[test]
fn timeshare_row_values() {
    let mut row = RlTimeShareRow::default();
    assert_eq!(
        unsafe { rl_timeshare_row(3.3, 0.025, 0.0, 2, 1000, &mut row) },
        RlStatus::Ok
    );
    assert_eq!(row.min_total_level, 13);
    assert!((row.avg_level - 13f64.sqrt()).abs() < 1e-12);
    assert!(row.feasible);
    assert_eq!(
        unsafe { rl_timeshare_row(3.3, 0.025, 0.0, 4, 1000, &mut row) },
        RlStatus::Ok
    );
    assert_eq!(row.min_total_level, 0);
    assert!(row.r_bar.is_infinite() || !row.feasible);
}

#[test]
fn simulate_is_deterministic() {
    let h = plant(&[1.0, 2.0], &[0.05, 0.05]);
    let mut exp = rl_experiment_default();
    exp.trials = 32;
    exp.steps = 100;
    exp.seed = 11;
    let run = || {
        let mut r = ptr::null_mut();
        let s = unsafe { rl_simulate(h, 32, 0.05, &exp, c"greedy".as_ptr(), &mut r) };
        assert_eq!(s, RlStatus::Ok);
        let mut y = vec![0.0; 100];
        let mut sig = vec![0.0; 100];
        assert_eq!(
            unsafe { rl_report_copy(r, y.as_mut_ptr(), sig.as_mut_ptr(), 100) },
            100
        );
        let v = unsafe { rl_report_verdict(r) };
        unsafe { rl_report_free(r) };
        (y, sig, v)
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, RlVerdict::Stable);

    let mut r = ptr::null_mut();
    let s = unsafe { rl_simulate(h, 32, 0.05, &exp, c"sideways".as_ptr(), &mut r) };
    assert_eq!(s, RlStatus::InvalidArgument);
    assert!(r.is_null());
    unsafe { rl_plant_free(h) };
}

#[test]
fn simulate_time_sharing() {
    let mut exp = rl_experiment_default();
    exp.trials = 16;
    exp.steps = 120;
    let mut r = ptr::null_mut();
    let s = unsafe {
        rl_simulate_timeshare(3.3, 0.025, 2, 13, 0.0, 1.0, &exp, c"iid".as_ptr(), &mut r)
    };
    assert_eq!(s, RlStatus::Ok);
    assert_eq!(unsafe { rl_report_verdict(r) }, RlVerdict::Stable);
    unsafe { rl_report_free(r) };
}

fn artifact_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = artifact_dir().join("libratelim_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
