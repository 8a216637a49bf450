use std::ffi::{CStr, CString};
use std::ptr;

use coopt_ffi::*;

const CONFIG: &str = r#"
seed = 2
k = 3
[dataset]
source = "synthetic"
train = 300
eval = 200
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(coopt_last_error()) }.to_string_lossy().into_owned()
}

fn config(text: &str) -> *mut CooptConfig {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { coopt_config_from_toml(text.as_ptr(), &mut cfg) }, CooptStatus::Ok, "{}", last_error());
    cfg
}

fn run(cfg: *const CooptConfig) -> *mut CooptRun {
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { coopt_run(cfg, &mut run) }, CooptStatus::Ok, "{}", last_error());
    run
}

#[test]
fn round_trip_through_handles() {
    unsafe {
        let cfg = config(CONFIG);
        let first = run(cfg);
        let count = coopt_run_sample_count(first);
        let n = coopt_run_target_dim(first);
        assert_eq!(count, 300);
        assert!(n > 0);

        let mut targets = vec![0f32; count * n];
        assert_eq!(coopt_run_copy_targets(first, targets.as_mut_ptr(), targets.len()), CooptStatus::Ok);
        assert!(targets.iter().all(|v| v.is_finite()));
        let mut ids = vec![0u64; count];
        assert_eq!(coopt_run_copy_sample_ids(first, ids.as_mut_ptr(), ids.len()), CooptStatus::Ok);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));

        let mut best = u32::MAX;
        assert_eq!(coopt_run_best_prior(first, &mut best), CooptStatus::Ok);
        let mut best_value = 0.0;
        assert_eq!(coopt_run_uniform_value(first, best, &mut best_value), CooptStatus::Ok);
        for p in 0..3 {
            let mut v = 0.0;
            assert_eq!(coopt_run_uniform_value(first, p, &mut v), CooptStatus::Ok);
            assert!(best_value <= v);
        }
        let mut acc = -1.0;
        assert_eq!(coopt_run_probe_accuracy(first, &mut acc), CooptStatus::Ok);
        assert!((0.0..=1.0).contains(&acc));

        // a second run with threads gives the same digest
        assert_eq!(coopt_config_set_threads(cfg, 3), CooptStatus::Ok);
        let second = run(cfg);
        assert_eq!(CStr::from_ptr(coopt_run_digest(first)), CStr::from_ptr(coopt_run_digest(second)));
        assert_eq!(coopt_config_set_seed(cfg, 99), CooptStatus::Ok);
        let third = run(cfg);
        assert_ne!(CStr::from_ptr(coopt_run_digest(first)), CStr::from_ptr(coopt_run_digest(third)));

        for r in [first, second, third] {
            coopt_run_free(r);
        }
        coopt_config_free(cfg);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new("shared_fraction = 0.0").unwrap();
        assert_eq!(coopt_config_from_toml(bad.as_ptr(), &mut cfg), CooptStatus::Config);
        assert!(cfg.is_null());
        assert!(last_error().contains("shared_fraction"));

        assert_eq!(coopt_config_new(ptr::null_mut()), CooptStatus::NullPointer);
        assert_eq!(coopt_config_set_seed(ptr::null_mut(), 1), CooptStatus::NullPointer);
        assert_eq!(coopt_run(ptr::null(), &mut ptr::null_mut()), CooptStatus::NullPointer);

        let cfg = config(CONFIG);
        assert_eq!(coopt_config_set_threads(cfg, 0), CooptStatus::InvalidArgument);
        let r = run(cfg);
        assert_eq!(last_error(), "");
        let mut small = vec![0f32; 3];
        assert_eq!(coopt_run_copy_targets(r, small.as_mut_ptr(), small.len()), CooptStatus::BufferTooSmall);
        let mut v = 0.0;
        assert_eq!(coopt_run_uniform_value(r, 17, &mut v), CooptStatus::InvalidArgument);
        coopt_run_free(r);
        coopt_config_free(cfg);
        coopt_run_free(ptr::null_mut());
        coopt_config_free(ptr::null_mut());
        assert_eq!(coopt_run_sample_count(ptr::null()), 0);
        assert!(coopt_run_digest(ptr::null()).is_null());
    }
}

#[test]
fn numeric_entry_points() {
    unsafe {
        let mut out = 1.0;
        let pair = [1.0, 0.0, -1.0, 0.0];
        assert_eq!(coopt_uniform_value(pair.as_ptr(), 2, 2, 2.0, true, &mut out), CooptStatus::Ok);
        assert!((out + 8.0).abs() < 1e-12);
        let same = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(coopt_uniform_value(same.as_ptr(), 2, 2, 2.0, true, &mut out), CooptStatus::Ok);
        assert_eq!(out, 0.0);
        assert_eq!(coopt_uniform_value(pair.as_ptr(), 1, 2, 2.0, true, &mut out), CooptStatus::Numeric);
        assert_eq!(coopt_uniform_value(ptr::null(), 2, 2, 2.0, true, &mut out), CooptStatus::NullPointer);

        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [10.0, 8.0, 7.0, 1.0];
        assert_eq!(coopt_spearman(xs.as_ptr(), ys.as_ptr(), 4, &mut out), CooptStatus::Ok);
        assert_eq!(out, -1.0);
        let flat = [2.0; 4];
        assert_eq!(coopt_spearman(xs.as_ptr(), flat.as_ptr(), 4, &mut out), CooptStatus::Numeric);
        assert!(!last_error().is_empty());

        let version = CStr::from_ptr(coopt_version()).to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));
    }
}
