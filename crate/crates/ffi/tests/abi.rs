use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pnr_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        pnr_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn field_lifecycle_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.pnrf").to_str().unwrap()).unwrap();
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(pnr_field_sample_init(3, 4, 5, 11, &mut f), PnrStatus::Ok);
        let n = pnr_field_param_count(f);
        assert_eq!(n, 4 * 60);
        assert_eq!(pnr_field_save(f, path.as_ptr()), PnrStatus::Ok);

        let mut g = ptr::null_mut();
        assert_eq!(pnr_field_load(path.as_ptr(), &mut g), PnrStatus::Ok);
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        assert_eq!(pnr_field_get_params(f, a.as_mut_ptr(), n), PnrStatus::Ok);
        assert_eq!(pnr_field_get_params(g, b.as_mut_ptr(), n), PnrStatus::Ok);
        assert_eq!(a, b);

        b[0] = f64::NAN;
        assert_eq!(pnr_field_set_params(g, b.as_ptr(), n), PnrStatus::Numerical);
        b[0] = 1.5;
        assert_eq!(pnr_field_set_params(g, b.as_ptr(), n), PnrStatus::Ok);
        assert_eq!(
            pnr_field_get_params(g, a.as_mut_ptr(), n - 1),
            PnrStatus::InvalidArgument
        );

        pnr_field_free(g);
        pnr_field_free(f);
        pnr_field_free(ptr::null_mut());
    }
}

#[test]
fn perturb_zero_is_identity() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(pnr_field_sample_init(4, 4, 4, 1, &mut f), PnrStatus::Ok);
        let mut p = ptr::null_mut();
        assert_eq!(pnr_field_perturb(f, 0.0, 9, &mut p), PnrStatus::Ok);
        let n = pnr_field_param_count(f);
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        pnr_field_get_params(f, a.as_mut_ptr(), n);
        pnr_field_get_params(p, b.as_mut_ptr(), n);
        assert_eq!(a, b);
        let mut q = ptr::null_mut();
        assert_eq!(pnr_field_perturb(f, 1.5, 9, &mut q), PnrStatus::InvalidArgument);
        assert!(q.is_null());
        pnr_field_free(p);
        pnr_field_free(f);
    }
}

#[test]
fn empty_field_renders_background() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(pnr_field_new_filled(4, 4, 4, -30.0, 0.0, &mut f), PnrStatus::Ok);
        let mut rgb = vec![0.0; 3 * 6 * 5];
        assert_eq!(
            pnr_render_orbit_view(f, 0, 2, 6, 5, rgb.as_mut_ptr(), rgb.len()),
            PnrStatus::Ok
        );
        assert!(rgb.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert_eq!(
            pnr_render_orbit_view(f, 2, 2, 6, 5, rgb.as_mut_ptr(), rgb.len()),
            PnrStatus::InvalidArgument
        );
        pnr_field_free(f);
    }
}

#[test]
fn probe_helpers() {
    let losses: Vec<f64> = (0..50).map(|i| 50.0 - i as f64).collect();
    let mut out = 0.0;
    unsafe {
        assert_eq!(pnr_loss_decrease(losses.as_ptr(), 50, 10, &mut out), PnrStatus::Ok);
        assert_eq!(out, -40.0);
        assert_eq!(
            pnr_loss_decrease(losses.as_ptr(), 15, 10, &mut out),
            PnrStatus::InvalidArgument
        );
        assert_eq!(pnr_determine_eta(1000.0, 1000.0, 0.6, &mut out), PnrStatus::Ok);
        assert!((out - 0.45).abs() < 1e-12);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(
            pnr_field_new_filled(0, 4, 4, 0.0, 0.0, &mut f),
            PnrStatus::InvalidArgument
        );
        assert!(!last_error().is_empty());
        assert_eq!(pnr_field_load(ptr::null(), &mut f), PnrStatus::NullPointer);
        assert_eq!(last_error(), "path is null");
        let missing = CString::new("/nonexistent/x.pnrf").unwrap();
        assert_eq!(pnr_field_load(missing.as_ptr(), &mut f), PnrStatus::Io);
        assert_eq!(pnr_field_param_count(ptr::null()), 0);
        assert_eq!(
            pnr_determine_eta(0.0, 1.0, 0.6, ptr::null_mut()),
            PnrStatus::NullPointer
        );
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(pnr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let lib = profile_dir().join("libpnr_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C toolchain or static library at {}", lib.display());
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke test failed to build");
    let out = Command::new(&exe).arg(dir.path().join("c.pnrf")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
