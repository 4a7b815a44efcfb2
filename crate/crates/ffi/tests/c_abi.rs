use std::ffi::{CStr, CString};
use std::ptr;

use scarf_ffi::*;

fn last_error() -> String {
    let p = scarf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn welch_matches_known_case() {
    let a = [1.0, 2.0, 3.0];
    let b = [4.0, 5.0, 6.0];
    let mut out = ScarfWelch::default();
    let st = unsafe { scarf_welch_t_test(a.as_ptr(), 3, b.as_ptr(), 3, &mut out) };
    assert_eq!(st, ScarfStatus::Ok);
    assert!((out.t + 3.674).abs() < 1e-3);
    assert!((out.df - 4.0).abs() < 1e-9);
    assert!((out.p - 0.021).abs() < 1e-3);
    assert!(scarf_last_error().is_null());
}

#[test]
fn null_and_invalid_inputs_report_status() {
    let mut out = ScarfWelch::default();
    let st = unsafe { scarf_welch_t_test(ptr::null(), 3, [1.0].as_ptr(), 1, &mut out) };
    assert_eq!(st, ScarfStatus::NullPointer);
    assert!(last_error().contains('a'));
    let a = [1.0];
    let st = unsafe { scarf_welch_t_test(a.as_ptr(), 1, a.as_ptr(), 1, &mut out) };
    assert_ne!(st, ScarfStatus::Ok);
    assert!(!last_error().is_empty());
    let mut loss = 0.0;
    let st = unsafe { scarf_infonce([1.0].as_ptr(), 1, 0.0, &mut loss, ptr::null_mut()) };
    assert_ne!(st, ScarfStatus::Ok);
}

#[test]
fn infonce_orthogonal_pair() {
    let s = [1.0, 0.0, 0.0, 1.0];
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    let st = unsafe { scarf_infonce(s.as_ptr(), 2, 1.0, &mut loss, grad.as_mut_ptr()) };
    assert_eq!(st, ScarfStatus::Ok);
    assert!((loss + 0.3799).abs() < 1e-4, "{loss}");
    assert!(grad[0] < 0.0 && grad[1] > 0.0);
}

#[test]
fn handles_round_trip_a_trial() {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { scarf_dataset_synthetic(200, 6, 3, &mut ds) }, ScarfStatus::Ok);
    assert_eq!(unsafe { scarf_dataset_rows(ds) }, 200);
    assert_eq!(unsafe { scarf_dataset_width(ds) }, 6);
    let toml = CString::new("batch_size = 32\nfinetune_max_epochs = 5\npretrain_max_epochs = 3").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { scarf_config_new(toml.as_ptr(), &mut cfg) }, ScarfStatus::Ok);
    let id = CString::new("syn").unwrap();
    let setting = CString::new("full").unwrap();
    let mut res = ScarfTrialResult::default();
    let control = CString::new("control").unwrap();
    let st = unsafe { scarf_run_trial(cfg, ds, id.as_ptr(), control.as_ptr(), setting.as_ptr(), 0, &mut res) };
    assert_eq!(st, ScarfStatus::Ok);
    assert!((0.0..=1.0).contains(&res.test_accuracy));
    assert_eq!(res.pretrain_epochs, -1);
    let method = CString::new("scarf").unwrap();
    let st = unsafe { scarf_run_trial(cfg, ds, id.as_ptr(), method.as_ptr(), setting.as_ptr(), 0, &mut res) };
    assert_eq!(st, ScarfStatus::Ok);
    assert!(res.pretrain_epochs >= 1);
    let bad = CString::new("bogus").unwrap();
    let st = unsafe { scarf_run_trial(cfg, ds, id.as_ptr(), bad.as_ptr(), setting.as_ptr(), 0, &mut res) };
    assert_eq!(st, ScarfStatus::Config);
    assert!(last_error().contains("bogus"));
    unsafe {
        scarf_config_free(cfg);
        scarf_dataset_free(ds);
        scarf_dataset_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_and_missing_files_fail_cleanly() {
    let toml = CString::new("no_such_key = 1").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { scarf_config_new(toml.as_ptr(), &mut cfg) }, ScarfStatus::Config);
    assert!(cfg.is_null());
    let p = CString::new("/nonexistent/x.csv").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { scarf_dataset_load(p.as_ptr(), p.as_ptr(), &mut ds) }, ScarfStatus::Io);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(scarf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
