use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use gfrag_ffi::*;

const TCP: &str = r#"
[model.tau]
family = "constant"
c = 1.0

[model.beta]
family = "power"
coef = 1.0
exponent = 1.0

[model.kernel]
variant = "point_mass"
r = 0.5
"#;

fn model(text: &str) -> Result<*mut GfModel, (GfStatus, String)> {
    let c = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { gf_model_from_toml(c.as_ptr(), &mut m) };
    if s == GfStatus::Ok {
        Ok(m)
    } else {
        Err((s, last_error()))
    }
}

fn last_error() -> String {
    let p = gf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn tcp_round_trip() {
    let m = model(TCP).unwrap();
    unsafe {
        let mut c = GfClassification::default();
        assert_eq!(gf_model_classify(m, &mut c), GfStatus::Ok);
        assert_eq!((c.harris_recurrent, c.positive_recurrent, c.exp_ergodic), (1, 1, 1));

        // L x at 1: tau + beta (1/2 - 1)
        let mut lf = 0.0;
        assert_eq!(gf_model_generator_power(m, 1.0, 1.0, &mut lf), GfStatus::Ok);
        assert!((lf - 0.5).abs() < 1e-12);

        let mut d = ptr::null_mut();
        assert_eq!(gf_model_sample_stationary(m, 2e5, 5, 1, 0, &mut d), GfStatus::Ok);
        let n = gf_distribution_len(d);
        assert!(n > 1000);
        let mut m2 = 0.0;
        assert_eq!(gf_distribution_moment(d, 2.0, &mut m2), GfStatus::Ok);
        assert!((m2 - 2.0).abs() < 0.1, "{m2}");

        let mut buf = vec![0.0; n];
        let mut written = 0;
        assert_eq!(gf_distribution_samples(d, buf.as_mut_ptr(), n, &mut written), GfStatus::Ok);
        assert_eq!(written, n);
        assert!(buf.iter().all(|&x| x > 0.0));
        assert_eq!(
            gf_distribution_samples(d, buf.as_mut_ptr(), 10, &mut written),
            GfStatus::BufferTooSmall
        );
        assert_eq!(written, 10);

        let mut fit = GfTailFit::default();
        assert_eq!(gf_distribution_fit_tails(d, &mut fit), GfStatus::Ok);
        assert_eq!(fit.has_right, 1);
        assert!((fit.theta - 2.0).abs() < 0.3, "{}", fit.theta);

        let mut g = ptr::null_mut();
        assert_eq!(gf_model_steady_state(m, 1e-2, 20.0, 300, 1e-7, 500.0, &mut g), GfStatus::Ok);
        let cells = gf_density_len(g);
        let (mut xs, mut gs) = (vec![0.0; cells], vec![0.0; cells]);
        assert_eq!(gf_density_values(g, xs.as_mut_ptr(), gs.as_mut_ptr(), cells), GfStatus::Ok);
        assert!(xs.windows(2).all(|w| w[1] > w[0]) && gs.iter().all(|&v| v >= 0.0));
        let mut pm2 = 0.0;
        assert_eq!(gf_density_moment(g, 2.0, &mut pm2), GfStatus::Ok);
        assert!((pm2 - 2.0).abs() < 0.05, "{pm2}");

        let mut l1 = 0.0;
        assert_eq!(gf_compare(g, d, 1e-2, 10.0, 100, &mut l1), GfStatus::Ok);
        assert!(l1 < 0.05, "{l1}");
        assert_eq!(gf_compare(g, d, 100.0, 200.0, 100, &mut l1), GfStatus::Domain);

        gf_density_free(g);
        gf_distribution_free(d);
        gf_model_free(m);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(gf_model_from_toml(ptr::null(), &mut m), GfStatus::NullPointer);
        assert!(last_error().contains("null"));

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(gf_model_from_toml(bad.as_ptr().cast(), &mut m), GfStatus::InvalidUtf8);

        let c = CString::new(TCP).unwrap();
        assert_eq!(gf_model_from_toml(c.as_ptr(), ptr::null_mut()), GfStatus::NullPointer);

        let mut lf = 0.0;
        assert_eq!(gf_model_generator_power(ptr::null(), 1.0, 1.0, &mut lf), GfStatus::NullPointer);
        assert_eq!(gf_distribution_len(ptr::null()), 0);
        gf_model_free(ptr::null_mut());
    }
    let text = TCP.replace("[model.beta]\nfamily = \"power\"\ncoef = 1.0\nexponent = 1.0\n", "");
    let (s, msg) = model(&text).unwrap_err();
    assert_eq!(s, GfStatus::Config);
    assert!(msg.contains("beta"), "{msg}");

    let (s, _) = model(&TCP.replace("r = 0.5", "r = 1.5")).unwrap_err();
    assert_eq!(s, GfStatus::InvalidModel);
}

#[test]
fn unbalanced_models_are_refused() {
    // beta = x^-2 fails the balance at 0
    let m = model(&TCP.replace("exponent = 1.0", "exponent = -2.0")).unwrap();
    unsafe {
        let mut c = GfClassification::default();
        gf_model_classify(m, &mut c);
        assert_eq!(c.positive_recurrent, 0);
        let mut d = ptr::null_mut();
        assert_eq!(gf_model_sample_stationary(m, 100.0, 1, 1, 0, &mut d), GfStatus::Refused);
        assert!(last_error().contains("positive recurrent"));
        assert!(d.is_null());
        let mut g = ptr::null_mut();
        assert_eq!(gf_model_steady_state(m, 1e-2, 20.0, 0, 1e-7, 10.0, &mut g), GfStatus::Domain);
        gf_model_free(m);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(gf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "gfrag.h"

static const char *TCP =
    "[model.tau]\nfamily = \"constant\"\nc = 1.0\n"
    "[model.beta]\nfamily = \"power\"\ncoef = 1.0\nexponent = 1.0\n"
    "[model.kernel]\nvariant = \"point_mass\"\nr = 0.5\n";

int main(void) {
    GfModel *m = NULL;
    if (gf_model_from_toml(TCP, &m) != GF_STATUS_OK) {
        fprintf(stderr, "%s\n", gf_last_error_message());
        return 1;
    }
    GfClassification c;
    if (gf_model_classify(m, &c) != GF_STATUS_OK || !c.exp_ergodic) return 2;
    double lf = 0.0;
    gf_model_generator_power(m, 1.0, 1.0, &lf);
    if (gf_model_from_toml(NULL, &m) != GF_STATUS_NULL_POINTER) return 3;
    printf("%s %.6f\n", gf_version(), lf);
    gf_model_free(m);
    return 0;
}
"#;

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let st = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-I"])
        .arg(header_dir())
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
    let st = Command::new("c++")
        .args(["-Wall", "-Werror", "-fsyntax-only", "-x", "c++", "-I"])
        .arg(header_dir())
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
}

/// Directory holding the test binary's sibling artifacts.
fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libgfrag_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    let exe = dir.path().join("use");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let st = Command::new("cc")
        .args(["-std=c99", "-I"])
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("{} 0.500000", env!("CARGO_PKG_VERSION")));
}
