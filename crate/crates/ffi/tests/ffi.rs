use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use encdec_ad::lstm::{DecodeMode, EncDecModel};
use encdec_ad::numerics::{seeded_gaussian, Matrix};
use encdec_ad::scoring::{anomaly_score, GaussianErrorModel};
use encdec_ad_ffi::*;

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ead_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    model_path: PathBuf,
    gm_path: PathBuf,
    model: EncDecModel,
    gm: GaussianErrorModel,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let model = EncDecModel::new(2, 5, 6, 11).unwrap();
    let model_path = dir.path().join("model.json");
    model.save(&model_path).unwrap();
    let cov = Matrix::from_rows(&[[0.5, 0.1], [0.1, 0.3]]).unwrap();
    let gm = GaussianErrorModel::from_moments(vec![0.2, 0.1], cov, 40).unwrap();
    let gm_path = dir.path().join("error_model.json");
    gm.save(&gm_path).unwrap();
    Fixture { _dir: dir, model_path, gm_path, model, gm }
}

#[test]
fn model_round_trip_matches_library() {
    let fx = fixture();
    let mut h: *mut EadModel = ptr::null_mut();
    unsafe {
        assert_eq!(ead_model_load(c_path(&fx.model_path).as_ptr(), &mut h), EadStatus::Ok);
        let (mut m, mut c, mut l) = (0, 0, 0);
        assert_eq!(ead_model_dims(h, &mut m, &mut c, &mut l), EadStatus::Ok);
        assert_eq!((m, c, l), (2, 5, 6));

        let w = seeded_gaussian(3, 12, 1.0);
        let expect = fx.model.reconstruct(&Matrix::from_vec(6, 2, w.clone()).unwrap(), DecodeMode::Autoregressive).unwrap();
        let mut out = vec![0.0; 12];
        assert_eq!(
            ead_model_reconstruct(h, w.as_ptr(), 6, 2, EadDecodeMode::Autoregressive, out.as_mut_ptr()),
            EadStatus::Ok
        );
        assert_eq!(out, expect.values.as_slice());

        let mut loss = 0.0;
        assert_eq!(ead_model_window_loss(h, w.as_ptr(), 6, 2, &mut loss), EadStatus::Ok);
        assert_eq!(loss, fx.model.window_loss(&Matrix::from_vec(6, 2, w.clone()).unwrap()).unwrap());

        assert_eq!(
            ead_model_reconstruct(h, w.as_ptr(), 4, 3, EadDecodeMode::TeacherForced, out.as_mut_ptr()),
            EadStatus::Dimension
        );
        assert!(last_error().contains("dimension"));
        ead_model_free(h);
    }
}

#[test]
fn scoring_matches_library() {
    let fx = fixture();
    let mut model: *mut EadModel = ptr::null_mut();
    let mut gm: *mut EadErrorModel = ptr::null_mut();
    unsafe {
        assert_eq!(ead_model_load(c_path(&fx.model_path).as_ptr(), &mut model), EadStatus::Ok);
        assert_eq!(ead_error_model_load(c_path(&fx.gm_path).as_ptr(), &mut gm), EadStatus::Ok);
        let mut m = 0;
        assert_eq!(ead_error_model_dims(gm, &mut m), EadStatus::Ok);
        assert_eq!(m, 2);

        let e = [0.7, -0.4];
        let mut s = 0.0;
        assert_eq!(ead_score_error_vector(gm, e.as_ptr(), 2, &mut s), EadStatus::Ok);
        assert_eq!(s, anomaly_score(&fx.gm, &e).unwrap());
        assert_eq!(ead_score_error_vector(gm, e.as_ptr(), 1, &mut s), EadStatus::Dimension);

        let w = seeded_gaussian(5, 12, 1.0);
        let mut scores = [0.0; 6];
        assert_eq!(
            ead_score_window(model, gm, w.as_ptr(), 6, 2, EadDecodeMode::TeacherForced, scores.as_mut_ptr()),
            EadStatus::Ok
        );
        let r = fx.model.reconstruct(&Matrix::from_vec(6, 2, w.clone()).unwrap(), DecodeMode::TeacherForced).unwrap();
        for i in 0..6 {
            let err: Vec<f64> = (0..2).map(|j| (w[i * 2 + j] - r.values.get(i, j)).abs()).collect();
            assert_eq!(scores[i], anomaly_score(&fx.gm, &err).unwrap());
        }
        ead_model_free(model);
        ead_error_model_free(gm);
    }
}

#[test]
fn thresholds_and_f_beta() {
    assert!((ead_f_beta(0.92, 0.04, 0.1) - 0.755447).abs() < 1e-6);
    assert_eq!(ead_f_beta(0.0, 0.0, 0.1), 0.0);
    let scores = [0.1, 0.4, 0.35, 0.8];
    let truth = [0u8, 0, 1, 1];
    let mut tau = f64::NAN;
    unsafe {
        assert_eq!(ead_threshold_supervised(scores.as_ptr(), truth.as_ptr(), 4, 1.0, &mut tau), EadStatus::Ok);
        // τ=0.1 flags {0.4, 0.35, 0.8}: P=2/3, R=1, F1=0.8 beats τ=0.4 (F1=2/3)
        assert_eq!(tau, 0.1);
        assert_eq!(ead_threshold_unsupervised(scores.as_ptr(), 4, &mut tau), EadStatus::Ok);
    }
    let mean = scores.iter().sum::<f64>() / 4.0;
    let sd = (scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((tau - (mean + sd)).abs() < 1e-12);
    unsafe {
        assert_eq!(ead_threshold_unsupervised(scores.as_ptr(), 1, &mut tau), EadStatus::Data);
    }
}

#[test]
fn bad_arguments_are_reported() {
    let mut h: *mut EadModel = ptr::null_mut();
    unsafe {
        assert_eq!(ead_model_load(ptr::null(), &mut h), EadStatus::NullPointer);
        assert!(h.is_null());
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(ead_model_load(missing.as_ptr(), &mut h), EadStatus::Io);
        assert!(last_error().contains("/nonexistent/model.json"));
        let (mut m, mut c, mut l) = (0, 0, 0);
        assert_eq!(ead_model_dims(ptr::null(), &mut m, &mut c, &mut l), EadStatus::NullPointer);
        ead_model_free(ptr::null_mut());
        ead_error_model_free(ptr::null_mut());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.json");
        std::fs::write(&junk, "{").unwrap();
        let mut g: *mut EadErrorModel = ptr::null_mut();
        assert_eq!(ead_error_model_load(c_path(&junk).as_ptr(), &mut g), EadStatus::Parse);
    }
    let v = unsafe { CStr::from_ptr(ead_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn last_error_is_thread_local() {
    unsafe {
        let mut tau = 0.0;
        assert_eq!(ead_threshold_unsupervised(ptr::null(), 3, &mut tau), EadStatus::NullPointer);
    }
    let here = last_error();
    let other = std::thread::spawn(|| ead_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(here.contains("scores"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "encdec_ad.h"

int main(int argc, char **argv) {
    if (argc != 3) return 99;
    EadModel *model = NULL;
    EadErrorModel *gm = NULL;
    if (ead_model_load(argv[1], &model) != EAD_STATUS_OK) return 1;
    if (ead_error_model_load(argv[2], &gm) != EAD_STATUS_OK) return 2;
    size_t m, c, l;
    if (ead_model_dims(model, &m, &c, &l) != EAD_STATUS_OK || m != 2 || l != 6) return 3;
    double w[12], scores[6];
    for (int i = 0; i < 12; i++) w[i] = 0.1 * i;
    if (ead_score_window(model, gm, w, 6, 2, EAD_DECODE_MODE_AUTOREGRESSIVE, scores) != EAD_STATUS_OK) return 4;
    for (int i = 0; i < 6; i++) printf("%.17g\n", scores[i]);
    if (ead_score_window(model, gm, w, 3, 4, EAD_DECODE_MODE_AUTOREGRESSIVE, scores) != EAD_STATUS_DIMENSION) return 5;
    if (ead_last_error() == NULL || strlen(ead_last_error()) == 0) return 6;
    ead_error_model_free(gm);
    ead_model_free(model);
    return 0;
}
"#;

/// Compiles a C program against the generated header and links the static library.
#[test]
fn header_compiles_and_links_from_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("encdec_ad.h").is_file());
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libencdec_ad_ffi.a");
    assert!(lib.is_file(), "{} missing", lib.display());

    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("C compiler runs");
    assert!(status.success());

    let out = Command::new(&exe).arg(&fx.model_path).arg(&fx.gm_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let got: Vec<f64> = String::from_utf8(out.stdout).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    let w = Matrix::from_vec(6, 2, (0..12).map(|i| 0.1 * i as f64).collect()).unwrap();
    let r = fx.model.reconstruct(&w, DecodeMode::Autoregressive).unwrap();
    for i in 0..6 {
        let err: Vec<f64> = (0..2).map(|j| (w.get(i, j) - r.values.get(i, j)).abs()).collect();
        assert_eq!(got[i], anomaly_score(&fx.gm, &err).unwrap());
    }
}
