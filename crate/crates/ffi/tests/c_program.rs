use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "bilstm.h"

int main(void) {
    BilstmModel *model = NULL;
    if (bilstm_model_new(BILSTM_CELL_BILINEAR, 3, 4, 2, 1, 7, &model) != BILSTM_STATUS_OK) return 10;
    BilstmDims dims;
    if (bilstm_model_dims(model, &dims) != BILSTM_STATUS_OK || dims.m != 4 || dims.out_dim != 1) return 11;
    double x[6] = {0.5, -1.0, 0.25, 1.0, 0.0, -0.5};
    double y[2];
    if (bilstm_model_forward(model, x, 2, y, 2) != BILSTM_STATUS_OK) return 12;
    double r[2];
    if (bilstm_model_activation_ratios(model, x, 2, r) != BILSTM_STATUS_OK || r[0] != 0.0) return 13;
    if (bilstm_model_forward(model, x, 2, y, 1) != BILSTM_STATUS_SHAPE_MISMATCH) return 14;
    if (bilstm_last_error()[0] == '\0') return 15;
    bilstm_model_free(model);

    BilstmParity p;
    if (bilstm_parity_solve(30, 250, 50, 0, &p) != BILSTM_STATUS_OK || p.hidden != 221) return 16;
    if (bilstm_classify_relation(1, 3) != 1) return 17;
    printf("%s %.17g %.17g\n", bilstm_version(), y[0], y[1]);
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libbilstm_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with(bilstm::VERSION), "{line}");
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("--version").output() {
        Ok(o) if o.status.success() => Ok(cc),
        _ => Err(()),
    }
}
