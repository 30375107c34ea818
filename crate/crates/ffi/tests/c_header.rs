//! Compiles and runs a C program against the generated header and the
//! shared library. Skipped when no C compiler or library is available.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "sspnp.h"

int main(void) {
    double px[4 * 4 * 3];
    for (int k = 0; k < 48; k++) px[k] = (k % 7) / 7.0;
    SspnpImage *a = NULL, *b = NULL;
    if (sspnp_image_new(4, 4, 3, px, &a) != SSPNP_STATUS_OK) return 1;
    if (sspnp_image_new(4, 4, 3, NULL, &b) != SSPNP_STATUS_OK) return 2;
    double v = 0.0;
    if (sspnp_psnr(a, b, &v) != SSPNP_STATUS_OK) return 3;
    if (sspnp_image_new(0, 4, 3, NULL, &b) != SSPNP_STATUS_DIMENSION) return 4;
    if (sspnp_last_error() == NULL) return 5;
    SspnpSolveOptions o = sspnp_solve_options_default();
    printf("%.6f %zu\n", v, o.iterations);
    sspnp_image_free(a);
    return 0;
}
"#;

fn library_dir() -> Option<PathBuf> {
    // target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    dir.join("libsspnp_ffi.so").exists().then_some(dir)
}

#[test]
fn c_program_links_and_runs() {
    let (Some(lib), Ok(cc)) = (library_dir(), which_cc()) else {
        eprintln!("skipping: no C compiler or shared library");
        return;
    };
    let tmp = std::env::temp_dir().join(format!("sspnp-c-{}", std::process::id()));
    std::fs::create_dir_all(&tmp).unwrap();
    let src = tmp.join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = tmp.join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib)
        .arg("-lsspnp_ffi")
        .arg(format!("-Wl,-rpath,{}", lib.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut parts = text.split_whitespace();
    let psnr: f64 = parts.next().unwrap().parse().unwrap();
    // oracle: mean of ((k % 7) / 7)^2 over k < 48, against a zero image
    let mse = (0..48).map(|k| ((k % 7) as f64 / 7.0).powi(2)).sum::<f64>() / 48.0;
    assert!((psnr - (-10.0 * mse.log10())).abs() < 1e-5);
    assert_eq!(parts.next(), Some("5"));
    std::fs::remove_dir_all(tmp).ok();
}

fn which_cc() -> Result<String, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(str::to_string)
        .ok_or(())
}
