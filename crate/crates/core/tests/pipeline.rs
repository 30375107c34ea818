use std::path::{Path, PathBuf};

use sspnp::config::{ExperimentConfig, Prior, Task};
use sspnp::experiment::{ablate, ablation_grid, degrade, run_experiment};
use sspnp::io::{load_image, save_image, save_image_16};
use sspnp::Error;

fn crop() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/chelsea128.png")
}

/// Small enough that a full run takes well under a second.
fn quick(task: Task, prior: Prior, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        task,
        prior,
        input: Some(crop()),
        out: out.to_path_buf(),
        resize: Some((32, 32)),
        train_iters: 4,
        hidden_dim: 16,
        admm_iters: 3,
        ..Default::default()
    }
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_experiment(&quick(Task::Sr2, Prior::PhiInr, dir.path())).unwrap();
    for name in [
        "reconstruction.png",
        "observation.png",
        "adjoint.png",
        "history.csv",
        "config.txt",
        "model.bin",
        "loss.csv",
        "manifest.json",
    ] {
        let path = dir.path().join(name);
        assert!(path.is_file(), "missing {name}");
        assert!(rec.artifacts.contains(&path), "{name} not listed");
    }
    assert_eq!(rec.observation_shape, (16, 16, 3));
    assert_eq!(rec.reconstruction.shape(), (32, 32, 3));
    assert_eq!(rec.history.len(), 3);
    assert!(rec.final_train_loss.unwrap().is_finite());
    let (before, after) = rec.model_checksum.clone().unwrap();
    assert_eq!(before, after);
    assert_eq!(before.len(), 64);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["task"], "sr2");
    assert_eq!(manifest["history"].as_array().unwrap().len(), 3);
    assert!(manifest["quality"]["psnr_db"].as_f64().unwrap() > 0.0);

    let saved = ExperimentConfig::load(&dir.path().join("config.txt")).unwrap();
    assert_eq!(saved, quick(Task::Sr2, Prior::PhiInr, dir.path()));

    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,sigma_k,mu_k,psnr,ssim,data_residual,psnr_x,update_error,elapsed_s"
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn same_config_gives_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(Task::Joint, Prior::SirenInr, dir.path());
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.reconstruction, b.reconstruction);
    assert_eq!(a.model_checksum, b.model_checksum);

    let other = run_experiment(&ExperimentConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.reconstruction, other.reconstruction);
}

#[test]
fn tv_prior_skips_training() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_experiment(&quick(Task::Deconv, Prior::Tv, dir.path())).unwrap();
    assert!(rec.final_train_loss.is_none());
    assert!(rec.model_checksum.is_none());
    assert!(!dir.path().join("model.bin").exists());
    assert!(!dir.path().join("loss.csv").exists());
    assert!(rec.psnr().is_some());
}

#[test]
fn precomputed_observation_matches_inline_degradation() {
    let dir = tempfile::tempdir().unwrap();
    let inline = quick(Task::Sr4, Prior::Tv, &dir.path().join("inline"));
    let clean = sspnp::io::resize(&load_image(crop()).unwrap(), 32, 32).unwrap();
    let y = degrade(&clean, &inline, inline.seed).unwrap();
    let obs_path = dir.path().join("obs.png");
    let ref_path = dir.path().join("ref.png");
    save_image_16(&y, &obs_path).unwrap();
    save_image_16(&clean, &ref_path).unwrap();

    let from_file = ExperimentConfig {
        input: None,
        observation: Some(obs_path),
        reference: Some(ref_path),
        resize: None,
        out: dir.path().join("file"),
        ..inline.clone()
    };
    let a = run_experiment(&inline).unwrap();
    let b = run_experiment(&from_file).unwrap();
    assert_eq!(b.observation_shape, (8, 8, 3));
    // 16-bit quantisation of both images is the only difference
    assert!((a.psnr().unwrap() - b.psnr().unwrap()).abs() < 0.05);
}

#[test]
fn observation_without_reference_has_no_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.png");
    let clean = sspnp::io::resize(&load_image(crop()).unwrap(), 32, 32).unwrap();
    save_image(&Task::Deconv.operator().apply(&clean).unwrap(), &obs).unwrap();
    let cfg = ExperimentConfig {
        input: None,
        observation: Some(obs),
        resize: None,
        ..quick(Task::Deconv, Prior::Tv, &dir.path().join("out"))
    };
    let rec = run_experiment(&cfg).unwrap();
    assert!(rec.quality.is_none() && rec.baseline_quality.is_none());
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let no_input = ExperimentConfig {
        input: None,
        ..quick(Task::Deconv, Prior::Tv, dir.path())
    };
    let err = run_experiment(&no_input).unwrap_err();
    assert!(
        matches!(&err, Error::Stage { stage, .. } if *stage == "config"),
        "{err}"
    );

    let missing = ExperimentConfig {
        input: Some(dir.path().join("nope.png")),
        ..quick(Task::Deconv, Prior::Tv, dir.path())
    };
    let err = run_experiment(&missing).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if *stage == "load"), "{err}");
    assert!(err.to_string().contains("nope.png"), "{err}");

    let bad = ExperimentConfig {
        admm_iters: 0,
        ..quick(Task::Deconv, Prior::Tv, dir.path())
    };
    let err = run_experiment(&bad).unwrap_err();
    assert!(
        matches!(&err, Error::Stage { stage, .. } if *stage == "config"),
        "{err}"
    );
}

#[test]
fn ablation_table_is_sorted_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let base = quick(Task::Deconv, Prior::PhiInr, dir.path());
    let tasks = [Task::Sr4, Task::Deconv];
    let priors = [Prior::Tv, Prior::PhiInr];
    let table = ablate(&ablation_grid(&base, &tasks, &priors, dir.path())).unwrap();
    let keys: Vec<_> = table.rows.iter().map(|r| (r.task, r.prior)).collect();
    assert_eq!(
        keys,
        vec![
            (Task::Deconv, Prior::PhiInr),
            (Task::Deconv, Prior::Tv),
            (Task::Sr4, Prior::PhiInr),
            (Task::Sr4, Prior::Tv),
        ]
    );
    assert!(table.rows.iter().all(|r| r.psnr.is_some() && r.baseline_psnr.is_some()));
    let tv = table.get(Task::Sr4, Prior::Tv).unwrap();
    let phi = table.get(Task::Sr4, Prior::PhiInr).unwrap();
    assert_eq!(tv.baseline_psnr, phi.baseline_psnr);
    assert!(dir.path().join("sr4-tv/manifest.json").is_file());

    let csv_path = dir.path().join("ablation.csv");
    table.write_csv(&csv_path).unwrap();
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap().lines().count(), 5);
    assert!(table.to_text().contains("phi-inr"));
}

#[test]
fn ablation_rejects_mismatched_configs() {
    let dir = tempfile::tempdir().unwrap();
    let base = quick(Task::Deconv, Prior::PhiInr, dir.path());
    assert!(ablate(std::slice::from_ref(&base)).is_err());
    let mut grid = ablation_grid(&base, &[Task::Deconv], &[Prior::PhiInr, Prior::Tv], dir.path());
    grid[1].train_iters += 1;
    assert!(ablate(&grid).is_err());
    let dup = vec![base.clone(), base];
    assert!(ablate(&dup).is_err());
}
