use std::ffi::{CStr, CString};
use std::ptr;

use vcm_sim_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(vcm_last_error()) }.to_string_lossy().into_owned()
}

fn bundled_model() -> *mut VcmModel {
    let mut m = ptr::null_mut();
    let st = unsafe { vcm_model_new(ptr::null(), ptr::null(), ptr::null(), ptr::null(), f64::NAN, 1, &mut m) };
    assert_eq!(st, VcmStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

#[test]
fn tile_round_trip_through_c_abi() {
    let m = bundled_model();
    let w = [0.5, -0.25, 0.0, 0.75, -1.0, 0.1];
    let mut t = ptr::null_mut();
    unsafe {
        assert_eq!(vcm_tile_new(m, 0, 2, 3, w.as_ptr(), 1.0, &mut t), VcmStatus::Ok, "{}", last_error());
        let (mut r, mut c) = (0, 0);
        assert_eq!(vcm_tile_shape(t, &mut r, &mut c), VcmStatus::Ok);
        assert_eq!((r, c), (2, 3));

        let mut read = [0.0; 6];
        assert_eq!(vcm_tile_read_weights(t, read.as_mut_ptr(), 6), VcmStatus::Ok);
        for (a, b) in read.iter().zip(&w) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }

        let x = [1.0, 2.0, -1.0];
        let mut y = [0.0; 2];
        assert_eq!(vcm_tile_forward(t, x.as_ptr(), 3, y.as_mut_ptr(), 2), VcmStatus::Ok);
        assert!((y[0] - (read[0] + 2.0 * read[1] - read[2])).abs() < 1e-12);

        let dw = [0.2, 0.0, -0.2, 0.0, 0.0, 0.0];
        let (mut applied, mut skipped) = (0u64, 0u64);
        assert_eq!(vcm_tile_update(t, dw.as_ptr(), 6, &mut applied, &mut skipped), VcmStatus::Ok);
        assert!(applied > 0);
        let mut after = [0.0; 6];
        vcm_tile_read_weights(t, after.as_mut_ptr(), 6);
        assert!(after[0] > read[0] && after[2] < read[2]);
        assert_eq!(after[1], read[1]);

        let mut v = usize::MAX;
        assert_eq!(vcm_tile_bound_violations(t, &mut v), VcmStatus::Ok);
        assert_eq!(v, 0);
        vcm_tile_free(t);
        vcm_model_free(m);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    let m = bundled_model();
    unsafe {
        let mut g = 0.0;
        assert_eq!(vcm_model_conductance(ptr::null(), 1e26, &mut g), VcmStatus::NullPointer);
        assert!(last_error().contains("model"));

        let w = [0.0; 4];
        let mut t = ptr::null_mut();
        assert_eq!(vcm_tile_new(m, 0, 2, 2, w.as_ptr(), 1.0, &mut t), VcmStatus::Ok);
        let mut out = [0.0; 3];
        assert_eq!(vcm_tile_read_weights(t, out.as_mut_ptr(), 3), VcmStatus::Dimension);

        let bogus = CString::new("bogus").unwrap();
        let mut m2 = ptr::null_mut();
        assert_eq!(vcm_model_new(ptr::null(), ptr::null(), ptr::null(), bogus.as_ptr(), f64::NAN, 1, &mut m2), VcmStatus::Config);
        assert!(m2.is_null());
        assert!(last_error().contains("bogus"));

        let missing = CString::new("/nonexistent/device.params").unwrap();
        assert_eq!(vcm_model_new(missing.as_ptr(), ptr::null(), ptr::null(), ptr::null(), f64::NAN, 1, &mut m2), VcmStatus::Io);
        assert!(last_error().contains("/nonexistent/device.params"));

        vcm_tile_free(t);
        vcm_model_free(m);
        vcm_model_free(ptr::null_mut());
    }
}

#[test]
fn model_queries() {
    let m = bundled_model();
    unsafe {
        let (mut g_lo, mut g_hi, mut i) = (0.0, 0.0, 0.0);
        assert_eq!(vcm_model_conductance(m, 1e25, &mut g_lo), VcmStatus::Ok);
        assert_eq!(vcm_model_conductance(m, 1e27, &mut g_hi), VcmStatus::Ok);
        assert!(g_hi > g_lo && g_lo > 0.0);
        assert_eq!(vcm_model_current(m, 1e26, -0.2, &mut i), VcmStatus::Ok);
        assert!(i < 0.0);
        assert!(!CStr::from_ptr(vcm_version()).to_bytes().is_empty());
        vcm_model_free(m);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/vcm_sim.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
