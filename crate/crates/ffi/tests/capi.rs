use std::ffi::{c_char, CString};
use std::ptr;

use kinwass_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { kw_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn measure(x: &[f64], v: &[f64]) -> *mut KwMeasure {
    let mut m = ptr::null_mut();
    let s = unsafe { kw_measure_new(1, x.len(), x.as_ptr(), v.as_ptr(), ptr::null(), &mut m) };
    assert_eq!(s, KwStatus::Ok);
    m
}

#[test]
fn distances_between_diracs() {
    let a = measure(&[0.1], &[0.0]);
    let b = measure(&[0.9], &[0.5]);
    let mut wp = 0.0;
    assert_eq!(unsafe { kw_wp_distance(a, b, 2.0, KwDomain::Torus, &mut wp) }, KwStatus::Ok);
    assert!((wp - 0.29f64.sqrt()).abs() < 1e-12);
    let mut k = KwKineticResult::default();
    assert_eq!(unsafe { kw_kinetic_distance(a, a, 2.0, KwDomain::Torus, &mut k) }, KwStatus::Ok);
    assert_eq!(k.value, 0.0);
    assert_eq!(unsafe { kw_measure_len(a) }, 1);
    unsafe {
        kw_measure_free(a);
        kw_measure_free(b);
        kw_measure_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_status_and_message() {
    let x = [0.1, 0.2];
    let v = [0.0, 0.0];
    let w = [0.7, 0.7];
    let mut m = ptr::null_mut();
    let s = unsafe { kw_measure_new(1, 2, x.as_ptr(), v.as_ptr(), w.as_ptr(), &mut m) };
    assert_eq!(s, KwStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("sum"), "{}", last_error());

    let mut out = 0.0;
    assert_eq!(unsafe { kw_wp_distance(ptr::null(), ptr::null(), 2.0, KwDomain::Torus, &mut out) }, KwStatus::NullPointer);
    let path = CString::new("/nonexistent/measure.csv").unwrap();
    assert_ne!(unsafe { kw_measure_read_csv(path.as_ptr(), &mut m) }, KwStatus::Ok);
    let mut k = KwKineticResult::default();
    assert_eq!(unsafe { kw_solve_dp_implicit(0.1, 0.1, 0.5, KwForm::Metric, &mut k) }, KwStatus::InvalidArgument);
    assert_eq!(unsafe { kw_solve_dp_implicit(0.0, 0.0, 2.0, KwForm::Metric, &mut k) }, KwStatus::Ok);
    assert_eq!(unsafe { kw_last_error_message(ptr::null_mut(), 0) }, 0);
}

#[test]
fn bounds_and_horizons() {
    let c = kw_bound_constants_default();
    let mut v = 0.0;
    assert_eq!(unsafe { kw_loeper_bound(1e-6, 0.0, &c, 2.0, 1, &mut v) }, KwStatus::Ok);
    assert_eq!(v, 1e-6);
    assert_eq!(unsafe { kw_kinetic_bound(1e-6, 0.0, &c, 2.0, &mut v) }, KwStatus::Ok);
    let collapsed = 2.0 * 1e-6 * (0.5e-6f64).ln().abs();
    assert!((v - collapsed).abs() <= 1e-12 * collapsed);
    let bad = KwBoundConstants { c_l: 0.0, ..c };
    assert_eq!(unsafe { kw_loeper_bound(1e-6, 0.0, &bad, 2.0, 1, &mut v) }, KwStatus::InvalidArgument);
    let (mut lo, mut ki) = (0.0, 0.0);
    assert_eq!(unsafe { kw_horizons(1e-8, &mut lo, &mut ki) }, KwStatus::Ok);
    assert!((lo - 2.914).abs() < 1e-3 && (ki - 4.292).abs() < 1e-3);
    assert_eq!(unsafe { kw_horizons(0.5, &mut lo, &mut ki) }, KwStatus::InvalidArgument);
}

#[test]
fn simulate_identical_pair() {
    let dir = tempfile::tempdir().unwrap();
    let text = CString::new("[sim]\nparticles = 1024\ncells = 32\ndt = 0.01\nt_end = 0.05\nsnapshots = 5\nsubsample = 32\n").unwrap();
    let mut config = ptr::null_mut();
    assert_eq!(unsafe { kw_config_from_toml(text.as_ptr(), &mut config) }, KwStatus::Ok);
    let (key, value) = (CString::new("sim.family").unwrap(), CString::new("identical").unwrap());
    assert_eq!(unsafe { kw_config_set(config, key.as_ptr(), value.as_ptr()) }, KwStatus::Ok);
    let bad = CString::new("sim.nope").unwrap();
    assert_eq!(unsafe { kw_config_set(config, bad.as_ptr(), value.as_ptr()) }, KwStatus::InvalidArgument);
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut summary = KwRunSummary::default();
    assert_eq!(unsafe { kw_simulate(config, out.as_ptr(), &mut summary) }, KwStatus::Ok);
    assert_eq!(summary.snapshots, 6);
    assert!(!summary.blew_up);
    assert!(summary.final_qp <= 1e-20);
    assert!(dir.path().join("diagnostics.csv").exists());
    unsafe { kw_config_free(config) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/kinwass.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct KwMeasure KwMeasure;"));
}
