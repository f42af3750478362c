use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use nusa::network::{Activation, Network};
use nusa::rng::Rng;
use nusa_ffi::*;

fn model_json() -> (Network, CString) {
    let mut rng = Rng::new(3);
    let net = Network::random(6, &[3], 2, Activation::Sigmoid, &mut rng).unwrap();
    let json = CString::new(net.to_json()).unwrap();
    (net, json)
}

fn last_error() -> String {
    let p = nusa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn round_trip_through_handle() {
    let (net, json) = model_json();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(
            nusa_network_from_json(json.as_ptr(), &mut h),
            NusaStatus::Ok
        );
        assert_eq!(nusa_network_input_dim(h), 6);
        assert_eq!(nusa_network_num_classes(h), 2);

        let x = [0.3, -1.0, 2.0, 0.5, 0.0, 1.5];
        let mut probs = [0.0; 2];
        let mut class = 99;
        let st = nusa_network_predict(h, x.as_ptr(), 6, probs.as_mut_ptr(), 2, &mut class);
        assert_eq!(st, NusaStatus::Ok);
        let (want_class, want) = net
            .predict(&nusa::linalg::DenseVector::new(x.to_vec()).unwrap())
            .unwrap();
        assert_eq!(class, want_class);
        assert_eq!(probs.to_vec(), want.as_slice().to_vec());

        let mut score = -1.0;
        assert_eq!(
            nusa_network_score(h, x.as_ptr(), 6, &mut score),
            NusaStatus::Ok
        );
        assert!((0.0..=1.0).contains(&score));

        let mut det = NusaDetection {
            score: 0.0,
            predicted_class: 0,
            is_outlier: false,
        };
        assert_eq!(
            nusa_network_detect(h, x.as_ptr(), 6, score, &mut det),
            NusaStatus::Ok
        );
        assert_eq!(det.score, score);
        assert!(det.is_outlier);
        assert_eq!(
            nusa_network_detect(h, x.as_ptr(), 6, score - 1e-9, &mut det),
            NusaStatus::Ok
        );
        assert!(!det.is_outlier);
        nusa_network_free(h);
    }
}

#[test]
fn errors_set_status_and_message() {
    let (_, json) = model_json();
    let mut h = ptr::null_mut();
    unsafe {
        let bad = CString::new("{\"format_version\": 1}").unwrap();
        assert_eq!(
            nusa_network_from_json(bad.as_ptr(), &mut h),
            NusaStatus::Parse
        );
        assert!(h.is_null());
        assert_eq!(
            nusa_network_from_json(ptr::null(), &mut h),
            NusaStatus::NullPointer
        );
        assert!(last_error().contains("json"));

        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(nusa_network_load(missing.as_ptr(), &mut h), NusaStatus::Io);
        assert!(last_error().contains("/nonexistent/model.json"));

        assert_eq!(
            nusa_network_from_json(json.as_ptr(), &mut h),
            NusaStatus::Ok
        );
        let x = [1.0; 4];
        let mut score = 0.0;
        assert_eq!(
            nusa_network_score(h, x.as_ptr(), 4, &mut score),
            NusaStatus::DimensionMismatch
        );
        assert!(last_error().contains("expected 6"));
        let nan = [f64::NAN; 6];
        assert_eq!(
            nusa_network_score(h, nan.as_ptr(), 6, &mut score),
            NusaStatus::InvalidArgument
        );
        assert_eq!(
            nusa_network_score(ptr::null(), x.as_ptr(), 6, &mut score),
            NusaStatus::NullPointer
        );
        assert_eq!(nusa_network_input_dim(ptr::null()), 0);
        nusa_network_free(h);
        nusa_network_free(ptr::null_mut());
    }
}

#[test]
fn layer_score_examples() {
    let w = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut s = -1.0;
    for (x, want) in [
        ([0.0, 0.0, 5.0], 0.0),
        ([3.0, 4.0, 0.0], 1.0),
        ([1.0, 0.0, 1.0], 0.5f64.sqrt()),
    ] {
        let st = unsafe { nusa_layer_score(w.as_ptr(), 2, 3, x.as_ptr(), 3, &mut s) };
        assert_eq!(st, NusaStatus::Ok);
        assert!((s - want).abs() < 1e-12);
    }
    let st = unsafe { nusa_layer_score(w.as_ptr(), 2, 3, [0.0; 3].as_ptr(), 3, &mut s) };
    assert_eq!(st, NusaStatus::Numeric);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(nusa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Directory holding the built libraries (`target/<profile>`).
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header_and_static_library() {
    let lib = artifact_dir().join("libnusa_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let (_, json) = model_json();
    let model = dir.path().join("model.json");
    std::fs::write(&model, json.to_bytes()).unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "nusa.h"

int main(int argc, char **argv) {
    NusaNetwork *net = NULL;
    if (nusa_network_load(argv[1], &net) != NUSA_STATUS_OK) {
        fprintf(stderr, "%s\n", nusa_last_error_message());
        return 1;
    }
    double x[6] = {0.3, -1.0, 2.0, 0.5, 0.0, 1.5};
    NusaDetection d;
    if (nusa_network_detect(net, x, 6, 0.5, &d) != NUSA_STATUS_OK) return 2;
    double bad[2] = {1.0, 2.0};
    double s;
    NusaStatus st = nusa_network_score(net, bad, 2, &s);
    printf("%zu %zu %d %d\n", nusa_network_input_dim(net), d.predicted_class, (int)st,
           d.score >= 0.0 && d.score <= 1.0);
    nusa_network_free(net);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("a C compiler is available");
    assert!(
        cc.status.success(),
        "{}",
        String::from_utf8_lossy(&cc.stderr)
    );
    let out = Command::new(&exe).arg(&model).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[0], "6");
    assert!(fields[1] == "0" || fields[1] == "1");
    assert_eq!(
        fields[2],
        (NusaStatus::DimensionMismatch as i32).to_string()
    );
    assert_eq!(fields[3], "1");
}
