//! The generated header must be valid C and C++.

use std::path::PathBuf;
use std::process::Command;

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/mflab.h")
}

fn compiler(name: &str) -> Option<String> {
    Command::new(name).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| name.to_string())
}

#[test]
fn header_exists_and_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for sym in ["mflab_kernel_riesz", "mflab_modulated_energy", "mflab_last_error", "MFLAB_STATUS_OK", "typedef struct MflabParticles"] {
        assert!(text.contains(sym), "missing {sym}");
    }
}

#[test]
fn header_parses_as_c_and_cpp() {
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Some(cc) = compiler(cc) else {
            eprintln!("{cc} not available; skipped");
            continue;
        };
        let out = Command::new(&cc).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang]).arg(header()).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "mflab.h"

int main(void) {
    MflabKernel *k = NULL;
    if (mflab_kernel_log(2, &k) != MFLAB_STATUS_OK) return 1;
    double x[4] = {-0.5, 0.0, 0.5, 0.0};
    MflabParticles *p = NULL;
    if (mflab_particles_new(2, 2, x, NULL, &p) != MFLAB_STATUS_OK) return 2;
    double e = 0.0;
    if (mflab_interaction_energy(p, k, &e) != MFLAB_STATUS_OK) return 3;
    if (fabs(e) > 1e-15) return 4;
    MflabKernel *bad = NULL;
    if (mflab_kernel_riesz(3, 0.5, &bad) != MFLAB_STATUS_INVALID_SPEC) return 5;
    if (mflab_last_error() == NULL) return 6;
    mflab_particles_free(p);
    mflab_kernel_free(k);
    printf("ok\n");
    return 0;
}
"#;

/// Links a C program against the static library next to this test binary.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler("cc") else {
        eprintln!("cc not available; skipped");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libmflab_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipped", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = dir.path().join("smoke");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
