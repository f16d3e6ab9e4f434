//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const SOURCE: &str = r#"
#include <stdio.h>
#include <math.h>
#include "gramlimit.h"

int main(void) {
    GlDensity *f = NULL;
    if (gl_density_new("constant", 0.0, 1.0, &f) != GL_STATUS_OK) return 10;
    double ur, ui, sr, si;
    if (gl_solve(f, 0.5, 1.0, 0.5, &ur, &ui, &sr, &si) != GL_STATUS_OK) return 11;
    if (!(si > 0.0)) return 12;
    GlDensity *bad = NULL;
    if (gl_density_new("fractional", 0.9, 1.0, &bad) != GL_STATUS_INVALID_ARGUMENT) return 13;
    if (bad != NULL || gl_last_error_message() == NULL) return 14;
    GlMatrix *m = NULL;
    if (gl_matrix_generate(f, 40, 20, 7, GL_INNOVATION_GAUSSIAN, &m) != GL_STATUS_OK) return 15;
    double eig[20];
    if (gl_matrix_gram_eigenvalues(m, eig, 20) != GL_STATUS_OK) return 16;
    printf("%s %.12f %.12f %.6f\n", gl_version(), ur, ui, eig[19]);
    gl_matrix_free(m);
    gl_density_free(f);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libgramlimit_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, SOURCE).unwrap();
    let exe = dir.path().join("main");
    let out = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
        {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
