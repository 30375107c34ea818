use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sspnp::io::{load_image, resize, save_image};

fn sspnp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sspnp")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_clean(dir: &Path) -> PathBuf {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/chelsea128.png");
    let path = dir.join("clean.png");
    save_image(&resize(&load_image(&src).unwrap(), 32, 32).unwrap(), &path).unwrap();
    path
}

const QUICK: [&str; 6] = ["--train-iters", "3", "--admm-iters", "2", "--set", "hidden_dim=16"];

#[test]
fn degrade_train_solve_chain() {
    let dir = tempfile::tempdir().unwrap();
    let clean = small_clean(dir.path());
    let p = |name: &str| dir.path().join(name).display().to_string();

    let y = p("y.png");
    let stdout = ok(sspnp(&[
        "degrade",
        "--task",
        "sr2",
        "--input",
        &clean.display().to_string(),
        "--out",
        &y,
        "--sixteen-bit",
    ]));
    assert!(stdout.contains("(16, 16, 3)"), "{stdout}");
    assert_eq!(load_image(&y).unwrap().shape(), (16, 16, 3));

    let mut args = vec!["train-denoiser", "--task", "sr2", "--input", &y];
    let model = p("model.bin");
    args.extend(["--out", &model]);
    args.extend(QUICK);
    let stdout = ok(sspnp(&args));
    assert!(stdout.contains("3 iterations"), "{stdout}");
    assert!(dir.path().join("model.loss.csv").is_file());

    let solved = p("solved");
    let clean_s = clean.display().to_string();
    let mut args = vec!["solve", "--task", "sr2", "--input", &y, "--model", &model];
    args.extend(["--reference", &clean_s, "--out", &solved, "--admm-iters", "2"]);
    let stdout = ok(sspnp(&args));
    assert!(stdout.contains("psnr"), "{stdout}");
    let rec = dir.path().join("solved/reconstruction.png");
    assert_eq!(load_image(&rec).unwrap().shape(), (32, 32, 3));
    assert!(dir.path().join("solved/history.csv").is_file());

    let report: serde_json::Value = serde_json::from_str(&ok(sspnp(&[
        "metrics",
        "--input",
        &rec.display().to_string(),
        "--reference",
        &clean_s,
    ])))
    .unwrap();
    assert!(report["psnr_db"].as_f64().unwrap() > 5.0);
    assert!(report["ssim"].as_f64().unwrap() <= 1.0);
}

#[test]
fn solve_with_tv_needs_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let clean = small_clean(dir.path()).display().to_string();
    let y = dir.path().join("y.png").display().to_string();
    ok(sspnp(&["degrade", "--task", "deconv", "--input", &clean, "--out", &y]));
    let out = dir.path().join("tv").display().to_string();
    ok(sspnp(&[
        "solve", "--task", "deconv", "--prior", "tv", "--input", &y, "--out", &out,
    ]));

    let err = sspnp(&["solve", "--task", "deconv", "--input", &y, "--out", &out]);
    assert_eq!(err.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&err.stderr).contains("--model is required"));
}

#[test]
fn run_reads_a_config_file_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let clean = small_clean(dir.path());
    let cfg_path = dir.path().join("exp.txt");
    std::fs::write(
        &cfg_path,
        format!(
            "# quick run\ntask = joint\nprior = siren-inr\ninput = {}\ntrain_iters = 3\nadmm_iters = 2\nhidden_dim = 16\n",
            clean.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let stdout = ok(sspnp(&[
        "run",
        "--config",
        &cfg_path.display().to_string(),
        "--prior",
        "phi-inr",
        "--out",
        &out.display().to_string(),
    ]));
    assert!(stdout.starts_with("joint / phi-inr"), "{stdout}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["prior"], "phi-inr");
    assert_eq!(manifest["config"]["train_iters"], 3);
}

#[test]
fn ablate_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let clean = small_clean(dir.path()).display().to_string();
    let out = dir.path().join("grid").display().to_string();
    let mut args = vec![
        "ablate",
        "--input",
        &clean,
        "--out",
        &out,
        "--tasks",
        "deconv,sr4",
        "--priors",
        "tv,phi-inr",
    ];
    args.extend(QUICK);
    let stdout = ok(sspnp(&args));
    assert!(stdout.contains("sr4") && stdout.contains("tv"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("grid/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let bad_task = sspnp(&["run", "--task", "inpaint", "--input", "x.png"]);
    assert_eq!(bad_task.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_task.stderr).contains("unknown task"));

    let bad_set = sspnp(&["run", "--set", "nonsense"]);
    assert_eq!(bad_set.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_set.stderr).contains("KEY=VALUE"));

    let unknown_key = sspnp(&["run", "--set", "colour=red"]);
    assert!(String::from_utf8_lossy(&unknown_key.stderr).contains("unknown key"));

    let missing = sspnp(&[
        "metrics",
        "--input",
        "/nonexistent/a.png",
        "--reference",
        "/nonexistent/b.png",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/a.png"));

    assert!(!sspnp(&["frobnicate"]).status.success());
    assert!(ok(sspnp(&["--help"])).contains("train-denoiser"));
}
