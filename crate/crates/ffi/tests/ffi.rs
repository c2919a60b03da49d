use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use psearch_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = ps_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn load(json: &str) -> *mut PsDistribution {
    let mut d = ptr::null_mut();
    assert_eq!(ps_dist_from_json(c(json).as_ptr(), &mut d), PsStatus::Ok);
    d
}

unsafe fn take_string(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    ps_string_free(s);
    out
}

const UNIFORM: &str = r#"{"support": [0, 1], "segments": [[0, 1, 1]]}"#;

#[test]
fn distribution_round_trip_and_queries() {
    unsafe {
        let d = load(UNIFORM);
        let mut v = 0.0;
        assert_eq!(ps_dist_mean(d, &mut v), PsStatus::Ok);
        assert_eq!(v, 0.5);
        assert_eq!(ps_dist_cdf(d, 0.25, &mut v), PsStatus::Ok);
        assert_eq!(v, 0.25);
        assert_eq!(ps_dist_expected_excess(d, 0.5, &mut v), PsStatus::Ok);
        assert!((v - 0.125).abs() < 1e-15);
        assert_eq!(ps_reservation_value(d, 0.25, 1.0 / 32.0, &mut v), PsStatus::Ok);
        assert!((v - 0.5).abs() < 1e-10);

        let mut s = ptr::null_mut();
        assert_eq!(ps_dist_to_json(d, &mut s), PsStatus::Ok);
        let json = take_string(s);
        let back = load(&json);
        let mut same = false;
        assert_eq!(ps_dist_is_mpc(back, d, 1e-12, &mut same), PsStatus::Ok);
        assert!(same);
        ps_dist_free(back);
        ps_dist_free(d);
    }
}

#[test]
fn fusion_contracts() {
    unsafe {
        let d = load(UNIFORM);
        let mut g = ptr::null_mut();
        assert_eq!(ps_dist_fuse(d, c(r#"{"regions": [[0.5, 1, 1]]}"#).as_ptr(), &mut g), PsStatus::Ok);
        let mut ok = false;
        assert_eq!(ps_dist_is_mpc(g, d, 1e-9, &mut ok), PsStatus::Ok);
        assert!(ok);
        assert_eq!(ps_dist_is_mpc(d, g, 1e-9, &mut ok), PsStatus::Ok);
        assert!(!ok);
        ps_dist_free(g);
        ps_dist_free(d);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(ps_dist_from_json(c("{").as_ptr(), &mut d), PsStatus::InvalidJson);
        assert!(d.is_null());
        assert!(last_error().contains("distribution"));

        assert_eq!(ps_dist_from_json(ptr::null(), &mut d), PsStatus::NullPointer);
        let bad = r#"{"support": [0, 1], "atoms": [[0.5, 0.5]]}"#;
        assert_eq!(ps_dist_from_json(c(bad).as_ptr(), &mut d), PsStatus::InvalidJson);

        let u = load(UNIFORM);
        let mut v = 0.0;
        assert_eq!(ps_reservation_value(u, 0.2, -1.0, &mut v), PsStatus::InvalidInput);
        assert!(!last_error().is_empty());
        assert_eq!(ps_dist_mean(ptr::null(), &mut v), PsStatus::NullPointer);
        assert_eq!(ps_dist_mean(u, ptr::null_mut()), PsStatus::NullPointer);
        ps_dist_free(u);
        ps_dist_free(ptr::null_mut());
        ps_string_free(ptr::null_mut());
    }
}

#[test]
fn payoff_curve_points() {
    assert_eq!(ps_example2_payoff(0.2), 0.0);
    assert_eq!(ps_example2_payoff(1.0), 7.0 / 16.0);
}

fn market(price: f64) -> String {
    format!(
        r#"{{"n": 2, "prior": {UNIFORM}, "cost": 0.05, "regime": "hidden", "trials": 4000, "seed": 1,
            "conjecture": {{"mixture": [{{"weight": 1, "price": {price}, "dist": {UNIFORM}}}]}},
            "search": {{"classes": ["fusion"], "screen_trials": 2000}}}}"#
    )
}

#[test]
fn simulate_and_check_json() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(ps_simulate_json(c(&market(0.3)).as_ptr(), &mut s), PsStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take_string(s)).unwrap();
        assert_eq!(v["firms"].as_array().unwrap().len(), 2);
        assert_eq!(v["trials"], 4000);

        assert_eq!(ps_check_json(c(&market(0.3)).as_ptr(), &mut s), PsStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take_string(s)).unwrap();
        assert_eq!(v["certified"], false);

        let broken = market(0.3).replace("\"cost\"", "\"kost\"");
        assert_eq!(ps_simulate_json(c(&broken).as_ptr(), &mut s), PsStatus::InvalidJson);
        assert!(last_error().contains("kost"));
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/psearch.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["ps_dist_from_json", "ps_simulate_json", "ps_check_json", "PS_STATUS_OK", "ps_last_error"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"psearch.h\"\nint main(void) { PsDistribution *d = 0; double m; return ps_dist_mean(d, &m) == PS_STATUS_OK; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("skipping C compile, no cc: {e}"),
    }
}
