use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use irs_ffi::*;

unsafe fn synth(num_ids: usize, d: usize, seed: u64) -> *mut IrsFeatures {
    let mut f = ptr::null_mut();
    assert_eq!(irs_features_synthetic(num_ids, 1, d, 1.0, 0.5, seed, &mut f), IrsStatus::Ok);
    f
}

unsafe fn dims(f: *const IrsFeatures) -> (usize, usize) {
    let (mut d, mut n) = (0, 0);
    assert_eq!(irs_features_dims(f, &mut d, &mut n), IrsStatus::Ok);
    (d, n)
}

unsafe fn data(f: *const IrsFeatures) -> Vec<f64> {
    let (d, n) = dims(f);
    let mut buf = vec![0.0; d * n];
    assert_eq!(irs_features_data(f, buf.as_mut_ptr(), buf.len()), IrsStatus::Ok);
    buf
}

fn last_error() -> String {
    let p = irs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn null_handles_and_bad_buffers_report_status() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(irs_fit_linear(ptr::null(), IrsCoding::OneHot, 0.1, 0, &mut m), IrsStatus::NullPointer);
        assert!(last_error().contains("features"));
        assert!(m.is_null());

        let f = synth(10, 6, 1);
        let (d, n) = dims(f);
        let mut small = vec![0.0; d * n - 1];
        assert_eq!(irs_features_data(f, small.as_mut_ptr(), small.len()), IrsStatus::BufferTooSmall);

        let bad = CString::new("/nonexistent/manifest.json").unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(irs_features_load(bad.as_ptr(), &mut g), IrsStatus::Io);

        let mut s = ptr::null_mut();
        assert_ne!(irs_incremental_init(f, 0.0, &mut s), IrsStatus::Ok);

        irs_features_free(f);
        irs_features_free(ptr::null_mut());
        irs_model_free(ptr::null_mut());
        irs_incremental_free(ptr::null_mut());
    }
}

#[test]
fn raw_round_trip_and_embedding_shape() {
    unsafe {
        let f = synth(12, 5, 2);
        let (d, n) = dims(f);
        let x = data(f);
        let ids: Vec<u32> = (0..n as u32).map(|i| i / 2).collect();
        let cams: Vec<u32> = (0..n as u32).map(|i| i % 2).collect();
        let mut g = ptr::null_mut();
        assert_eq!(
            irs_features_from_raw(x.as_ptr(), d, n, ids.as_ptr(), cams.as_ptr(), &mut g),
            IrsStatus::Ok
        );
        assert_eq!(data(g), x);

        let mut m = ptr::null_mut();
        assert_eq!(irs_fit_linear(g, IrsCoding::Fda, 0.1, 0, &mut m), IrsStatus::Ok);
        let (mut ind, mut outd) = (0, 0);
        assert_eq!(irs_model_dims(m, &mut ind, &mut outd), IrsStatus::Ok);
        assert_eq!(ind, d);
        let mut e = vec![0.0; n * outd];
        assert_eq!(irs_model_embed(m, x.as_ptr(), d, n, e.as_mut_ptr(), e.len()), IrsStatus::Ok);
        assert!(e.iter().all(|v| v.is_finite()));
        assert_eq!(
            irs_model_embed(m, x.as_ptr(), d + 1, n - 1, e.as_mut_ptr(), e.len()),
            IrsStatus::DimensionMismatch
        );

        irs_model_free(m);
        irs_features_free(g);
        irs_features_free(f);
    }
}

#[test]
fn model_save_load_preserves_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("model.json").to_str().unwrap()).unwrap();
    unsafe {
        let f = synth(30, 16, 4);
        let (_, n) = dims(f);
        let mut m = ptr::null_mut();
        assert_eq!(irs_fit_kernel_rbf(f, IrsCoding::OneHot, 0.1, 0.0, 0, &mut m), IrsStatus::Ok);
        assert_eq!(irs_model_save(m, path.as_ptr()), IrsStatus::Ok);
        let mut m2 = ptr::null_mut();
        assert_eq!(irs_model_load(path.as_ptr(), &mut m2), IrsStatus::Ok);

        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        let (mut map_a, mut map_b) = (0.0, 0.0);
        assert_eq!(irs_evaluate(m, f, f, a.as_mut_ptr(), n, &mut map_a), IrsStatus::Ok);
        assert_eq!(irs_evaluate(m2, f, f, b.as_mut_ptr(), n, &mut map_b), IrsStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(map_a, map_b);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!((a[n - 1] - 1.0).abs() < 1e-12);

        irs_model_free(m);
        irs_model_free(m2);
        irs_features_free(f);
    }
}

#[test]
fn incremental_matches_batch_and_survives_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("state.json").to_str().unwrap()).unwrap();
    unsafe {
        let f = synth(20, 8, 5);
        let (d, n) = dims(f);
        let x = data(f);
        let ids: Vec<u32> = (0..n as u32).map(|i| i / 2).collect();
        let cams: Vec<u32> = (0..n as u32).map(|i| i % 2).collect();
        let half = n / 2;

        let mut head = ptr::null_mut();
        assert_eq!(
            irs_features_from_raw(x.as_ptr(), d, half, ids.as_ptr(), cams.as_ptr(), &mut head),
            IrsStatus::Ok
        );
        let mut s = ptr::null_mut();
        assert_eq!(irs_incremental_init(head, 0.1, &mut s), IrsStatus::Ok);
        assert_eq!(irs_incremental_save(s, path.as_ptr()), IrsStatus::Ok);
        let mut restored = ptr::null_mut();
        assert_eq!(irs_incremental_load(path.as_ptr(), &mut restored), IrsStatus::Ok);

        for st in [s, restored] {
            assert_eq!(
                irs_incremental_update(st, x[half * d..].as_ptr(), d, n - half, ids[half..].as_ptr()),
                IrsStatus::Ok
            );
        }
        let (mut dd, mut m) = (0, 0);
        assert_eq!(irs_incremental_dims(s, &mut dd, &mut m), IrsStatus::Ok);
        assert_eq!((dd, m), (d, n / 2));

        let mut p = vec![0.0; d * m];
        let mut q = vec![0.0; d * m];
        assert_eq!(irs_incremental_projection(s, p.as_mut_ptr(), p.len()), IrsStatus::Ok);
        assert_eq!(irs_incremental_projection(restored, q.as_mut_ptr(), q.len()), IrsStatus::Ok);
        assert_eq!(p, q);

        let mut full = ptr::null_mut();
        assert_eq!(
            irs_features_from_raw(x.as_ptr(), d, n, ids.as_ptr(), cams.as_ptr(), &mut full),
            IrsStatus::Ok
        );
        let mut batch = ptr::null_mut();
        assert_eq!(irs_fit_linear(full, IrsCoding::OneHot, 0.1, 0, &mut batch), IrsStatus::Ok);
        let mut snap = ptr::null_mut();
        assert_eq!(irs_incremental_model(s, &mut snap), IrsStatus::Ok);
        let mut eb = vec![0.0; n * m];
        let mut ei = vec![0.0; n * m];
        assert_eq!(irs_model_embed(batch, x.as_ptr(), d, n, eb.as_mut_ptr(), eb.len()), IrsStatus::Ok);
        assert_eq!(irs_model_embed(snap, x.as_ptr(), d, n, ei.as_mut_ptr(), ei.len()), IrsStatus::Ok);
        let diff: f64 = eb.iter().zip(&ei).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = eb.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-9, "relative diff {}", diff / norm);

        irs_model_free(snap);
        irs_model_free(batch);
        irs_features_free(full);
        irs_incremental_free(restored);
        irs_incremental_free(s);
        irs_features_free(head);
        irs_features_free(f);
    }
}

#[test]
fn header_is_generated_and_c_program_links() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/irs.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["irs_features_load", "irs_fit_linear", "irs_incremental_update", "irs_evaluate", "IRS_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }

    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping link check");
        return;
    };
    let target = root.join("../../target/debug");
    let lib = target.join("libirs_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built; skipping link check");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke test failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
