use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cvpo_ffi::*;

fn last_error() -> String {
    let p = cvpo_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn trainer_round_trip() {
    let cfg = CString::new("env = grid\nseed = 3\nepochs = 2\n").unwrap();
    let mut t = ptr::null_mut();
    unsafe {
        assert_eq!(cvpo_trainer_new(cfg.as_ptr(), &mut t), CvpoStatus::Ok);
        let mut m = CvpoEpoch::default();
        for e in 1..=2 {
            assert_eq!(cvpo_trainer_run_epoch(t, &mut m), CvpoStatus::Ok);
            assert_eq!(m.epoch, e);
        }
        assert!(m.env_steps > 0 && m.ep_reward_mean.is_finite());
        cvpo_trainer_free(t);
    }
    assert!(cvpo_last_error().is_null());
}

#[test]
fn config_errors_map_to_status() {
    let mut t = ptr::null_mut();
    let bad = CString::new("env = nowhere\n").unwrap();
    let s = unsafe { cvpo_trainer_new(bad.as_ptr(), &mut t) };
    assert_eq!(s, CvpoStatus::Config);
    assert!(t.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { cvpo_trainer_new(ptr::null(), &mut t) }, CvpoStatus::NullPointer);
    unsafe { cvpo_trainer_free(ptr::null_mut()) };
}

#[test]
fn estep_weights_are_normalised() {
    let (n, k) = (2, 3);
    let qr = [1.0, 0.0, -1.0, 0.5, 0.2, 0.1];
    let qc = [1.0, 0.0, 0.0, 0.0, 0.3, 0.6];
    let mut w = [0.0; 6];
    let mut d = CvpoDual::default();
    let s = unsafe { cvpo_estep_solve(n, k, qr.as_ptr(), qc.as_ptr(), 0.3, 0.1, w.as_mut_ptr(), &mut d) };
    assert_eq!(s, CvpoStatus::Ok, "{}", last_error());
    for row in w.chunks(k) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(d.eta > 0.0 && d.lambda >= 0.0 && (0..=3).contains(&d.status));
    let s = unsafe { cvpo_estep_solve(n, k, qr.as_ptr(), qc.as_ptr(), 0.3, -1.0, w.as_mut_ptr(), &mut d) };
    assert_ne!(s, CvpoStatus::Ok);
}

#[test]
fn scalar_helpers() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(cvpo_lambert_w(0, -(-1f64).exp(), &mut v), CvpoStatus::Ok);
        assert!((v + 1.0).abs() < 1e-10);
        assert_eq!(cvpo_lambert_w(0, -1.0, &mut v), CvpoStatus::InvalidArgument);
        assert_eq!(cvpo_convert_threshold(5.0, 1, 0.99, &mut v), CvpoStatus::Ok);
        assert_eq!(v, 5.0);
        assert_eq!(cvpo_convert_threshold(5.0, 300, 0.99, ptr::null_mut()), CvpoStatus::NullPointer);
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/cvpo.h");
    assert!(header.exists());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"cvpo.h\"\nint main(void) { CvpoEpoch m; CvpoTrainer *t = 0; (void)m; return cvpo_trainer_run_epoch(t, &m) == CVPO_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
