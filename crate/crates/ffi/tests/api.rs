use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use tempfile::TempDir;
use trajdistill_ffi::*;

const TINY: &str =
    "[distill]\nbatch_size = 6\node_steps = 8\nwarmup_iterations = 3\niterations = 4\n\
[model]\nwidths = 12,12\ndisc_widths = 6\n[eval]\nsamples = 64\nprojections = 4\ngap_batch = 6\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(td_last_error()) }
        .to_str()
        .unwrap()
        .to_owned()
}

fn tiny() -> *mut TdTrainer {
    let text = CString::new(TINY).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { td_trainer_new(text.as_ptr(), &mut h) },
        TdStatus::Ok,
        "{}",
        last_error()
    );
    assert!(!h.is_null());
    h
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(td_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn train_sample_save_load() {
    let h = tiny();
    unsafe {
        let mut loss = f64::NAN;
        assert_eq!(td_trainer_warmup(h, &mut loss), TdStatus::Ok);
        assert!(loss.is_finite());
        let mut stats = TdIterationStats::default();
        assert_eq!(td_trainer_train(h, 2, &mut stats), TdStatus::Ok);
        assert_eq!(stats.iteration, 1);
        assert_eq!(stats.teacher_evals, 2 * stats.solver_steps);
        assert_eq!(td_trainer_iteration(h), 2);

        let dim = td_trainer_dim(h);
        assert_eq!(dim, 2);
        let n = 16;
        let mut a = vec![0.0; n * dim];
        let mut labels = vec![-1i64; n];
        assert_eq!(
            td_trainer_sample(h, 2, n, 7, a.as_mut_ptr(), labels.as_mut_ptr()),
            TdStatus::Ok
        );
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(labels.iter().all(|&c| c >= 0));

        let mut gap = -1.0;
        assert_eq!(td_trainer_consistency_gap(h, &mut gap), TdStatus::Ok);
        assert!(gap >= 0.0);
        let (mut d, mut floor) = (-1.0, -1.0);
        assert_eq!(
            td_trainer_endpoint_distance(h, 1, &mut d, &mut floor),
            TdStatus::Ok
        );
        assert!(d >= 0.0 && floor >= 0.0);

        let dir = TempDir::new().unwrap();
        let path = CString::new(dir.path().join("t.stdl").to_str().unwrap()).unwrap();
        assert_eq!(td_trainer_save(h, path.as_ptr()), TdStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(td_trainer_load(path.as_ptr(), &mut back), TdStatus::Ok);
        assert_eq!(td_trainer_iteration(back), 2);
        let mut b = vec![0.0; n * dim];
        assert_eq!(
            td_trainer_sample(back, 2, n, 7, b.as_mut_ptr(), ptr::null_mut()),
            TdStatus::Ok
        );
        assert_eq!(a, b);

        td_trainer_free(back);
        td_trainer_free(h);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(
            td_trainer_new(ptr::null(), ptr::null_mut()),
            TdStatus::NullPointer
        );
        assert!(last_error().contains("out"));

        let bad = CString::new("[distill]\nrho = 1.5\n").unwrap();
        assert_eq!(td_trainer_new(bad.as_ptr(), &mut h), TdStatus::Config);
        assert!(h.is_null());
        assert!(!last_error().is_empty());

        let missing = CString::new("/nonexistent/t.stdl").unwrap();
        assert_eq!(td_trainer_load(missing.as_ptr(), &mut h), TdStatus::Io);

        let dir = TempDir::new().unwrap();
        let junk = dir.path().join("junk.stdl");
        std::fs::write(&junk, b"STDLnope").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(td_trainer_load(junk.as_ptr(), &mut h), TdStatus::Checkpoint);

        let invalid = [0xffu8 as std::ffi::c_char, 0];
        assert_eq!(td_trainer_new(invalid.as_ptr(), &mut h), TdStatus::Utf8);

        assert_eq!(
            td_trainer_warmup(ptr::null_mut(), ptr::null_mut()),
            TdStatus::NullPointer
        );
        assert_eq!(td_trainer_iteration(ptr::null()), 0);
        assert_eq!(td_trainer_dim(ptr::null()), 0);
        td_trainer_free(ptr::null_mut());

        let t = tiny();
        assert_eq!(
            td_trainer_sample(t, 2, 4, 0, ptr::null_mut(), ptr::null_mut()),
            TdStatus::NullPointer
        );
        let mut out = [0.0; 8];
        assert_eq!(
            td_trainer_sample(t, 0, 4, 0, out.as_mut_ptr(), ptr::null_mut()),
            TdStatus::InvalidArgument
        );
        assert_eq!(td_trainer_dim(t), 2);
        let mut stats = TdIterationStats::default();
        assert_eq!(td_trainer_train(t, 0, &mut stats), TdStatus::Ok);
        assert_eq!(last_error(), "");
        td_trainer_free(t);
    }
}

#[test]
fn theorem_holds_through_the_boundary() {
    let (mut err, mut failures) = (f64::NAN, usize::MAX);
    assert_eq!(
        unsafe { td_verify_theorem(10, 2, 0, &mut err, &mut failures) },
        TdStatus::Ok
    );
    assert!(err < 1e-9, "{err}");
    assert_eq!(failures, 0);
}

#[test]
fn header_compiles_as_c() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let header = std::fs::read_to_string(format!("{include}/trajdistill.h")).unwrap();
    for name in [
        "td_trainer_new",
        "td_trainer_free",
        "td_last_error",
        "TD_STATUS_NON_FINITE",
        "typedef struct TdTrainer TdTrainer",
    ] {
        assert!(header.contains(name), "{name}");
    }
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"trajdistill.h\"\nint main(void) { TdTrainer *t = 0; TdStatus s = td_trainer_new(0, &t); td_trainer_free(t); return s; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args([
            "-std=c99",
            "-Wall",
            "-Werror",
            "-fsyntax-only",
            "-I",
            include,
        ])
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
