//! End-to-end runs: degrade, train, restore, measure, write artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::admm::{run_admm, write_history_csv, Denoiser, IterationRecord};
use crate::config::{ExperimentConfig, Prior, Task};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::inr::{encode_model, save_model, DenoiserModel};
use crate::io::{load_image, resize, save_image};
use crate::metrics::{quality, QualityReport};
use crate::train::{train_single_shot, write_loss_csv};

/// `y = A(clean)` plus Gaussian noise of `cfg.obs_noise_std` (unclamped).
pub fn degrade(clean: &Image, cfg: &ExperimentConfig, seed: u64) -> Result<Image> {
    let op = cfg.task.operator();
    let mut y = op.apply(clean)?;
    if cfg.obs_noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.obs_noise_std).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        y = y.map(|v| v + normal.sample(&mut rng));
    }
    log::info!(
        "degrade: {} ({}) -> {:?}, noise std {}",
        cfg.task,
        describe(&op),
        y.shape(),
        cfg.obs_noise_std
    );
    Ok(y)
}

fn describe(op: &crate::operators::ForwardOperator) -> String {
    let k = op.kernel();
    let mut s = format!(
        "{:?}, gaussian kernel {}x{} std {}",
        op.kind(),
        k.size(),
        k.size(),
        k.std()
    );
    if let crate::operators::ForwardOperator::SuperRes { scale, .. } = op {
        let _ = write!(s, ", scale {scale}");
    }
    s
}

/// Hex SHA-256 of the serialised model.
pub fn model_checksum(model: &DenoiserModel) -> String {
    Sha256::digest(encode_model(model))
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    /// Loading plus degradation.
    pub load_s: f64,
    pub train_s: f64,
    pub admm_s: f64,
    pub total_s: f64,
}

/// Everything a run produced. The manifest is this struct as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub operator: String,
    pub observation_shape: (usize, usize, usize),
    pub history: Vec<IterationRecord>,
    /// Reconstruction against the clean reference.
    pub quality: Option<QualityReport>,
    /// `Aᵀy` against the clean reference.
    pub baseline_quality: Option<QualityReport>,
    pub final_train_loss: Option<f64>,
    /// Model checksum after training and again after ADMM.
    pub model_checksum: Option<(String, String)>,
    pub timings: Timings,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip)]
    pub reconstruction: Image,
}

impl RunRecord {
    pub fn psnr(&self) -> Option<f64> {
        self.quality.as_ref().map(|q| q.psnr_db)
    }
}

struct Inputs {
    clean: Option<Image>,
    observation: Image,
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let load_clean = |path: &Path| -> Result<Image> {
        let img = load_image(path)?;
        match cfg.resize {
            Some((w, h)) => resize(&img, w, h),
            None => Ok(img),
        }
    };
    match (&cfg.observation, &cfg.input) {
        (Some(obs), _) => Ok(Inputs {
            clean: cfg.reference.as_deref().map(load_clean).transpose()?,
            observation: load_image(obs)?,
        }),
        (None, Some(input)) => {
            let clean = load_clean(input)?;
            let observation = degrade(&clean, cfg, cfg.seed).map_err(|e| e.in_stage("degrade"))?;
            Ok(Inputs {
                clean: Some(clean),
                observation,
            })
        }
        (None, None) => Err(Error::config("set input (clean image) or observation")),
    }
}

/// Runs one experiment from a config alone and writes its artifacts to
/// `cfg.out`: `reconstruction.png`, `observation.png`, `adjoint.png`,
/// `history.csv`, `config.txt`, `manifest.json`, and for learned priors
/// `model.bin` and `loss.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let total = Instant::now();
    let mut timings = Timings::default();

    let t = Instant::now();
    let inputs = load_inputs(cfg).map_err(|e| match e {
        Error::Stage { .. } => e,
        other => other.in_stage("load"),
    })?;
    timings.load_s = t.elapsed().as_secs_f64();
    let op = cfg.task.operator();
    let y = &inputs.observation;
    let channels = y.channels();
    if cfg.task == Task::Joint && channels != 3 {
        return Err(Error::dim("the joint task needs an RGB image").in_stage("load"));
    }

    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e).in_stage("write"))?;
    let mut artifacts = Vec::new();

    let t = Instant::now();
    let (model, losses) = match cfg.prior {
        Prior::Tv => (None, Vec::new()),
        Prior::PhiInr | Prior::SirenInr => {
            let train_image = op.normalize_observation(y).map_err(|e| e.in_stage("train"))?;
            let outcome = train_single_shot(
                &train_image,
                &cfg.model_config(channels).map_err(|e| e.in_stage("train"))?,
                &cfg.train_config(),
            )
            .map_err(|e| e.in_stage("train"))?;
            (Some(outcome.model), outcome.losses)
        }
    };
    timings.train_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let before = model.as_ref().map(model_checksum);
    let tv = cfg.tv();
    let denoiser: &dyn Denoiser = match &model {
        Some(m) => m,
        None => &tv,
    };
    let admm_cfg = cfg.admm_config().map_err(|e| e.in_stage("admm"))?;
    let outcome = run_admm(y, &op, denoiser, &admm_cfg, inputs.clean.as_ref()).map_err(|e| e.in_stage("admm"))?;
    let after = model.as_ref().map(model_checksum);
    timings.admm_s = t.elapsed().as_secs_f64();
    if before != after {
        return Err(Error::Contract("denoiser weights changed during ADMM".into()).in_stage("admm"));
    }

    let (q, baseline) = match &inputs.clean {
        Some(clean) => (
            Some(quality(&outcome.output, clean).map_err(|e| e.in_stage("metrics"))?),
            Some(quality(&outcome.initial.clamp01(), clean).map_err(|e| e.in_stage("metrics"))?),
        ),
        None => (None, None),
    };

    let write = |e: Error| e.in_stage("write");
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = cfg.out.join(name);
        f(&path).map_err(write)?;
        artifacts.push(path);
        Ok(())
    };
    emit("reconstruction.png", &|p| save_image(&outcome.output, p))?;
    emit("observation.png", &|p| save_image(y, p))?;
    emit("adjoint.png", &|p| save_image(&outcome.initial, p))?;
    emit("history.csv", &|p| write_history_csv(p, &outcome.history))?;
    emit("config.txt", &|p| {
        std::fs::write(p, cfg.to_text()).map_err(|e| Error::io(p, e))
    })?;
    if let Some(m) = &model {
        emit("model.bin", &|p| save_model(m, p))?;
        emit("loss.csv", &|p| write_loss_csv(p, &losses))?;
    }
    let manifest_path = cfg.out.join("manifest.json");
    artifacts.push(manifest_path.clone());
    timings.total_s = total.elapsed().as_secs_f64();

    let record = RunRecord {
        config: cfg.clone(),
        operator: describe(&op),
        observation_shape: y.shape(),
        history: outcome.history,
        quality: q,
        baseline_quality: baseline,
        final_train_loss: losses.last().copied(),
        model_checksum: before.zip(after),
        timings,
        artifacts,
        reconstruction: outcome.output,
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Contract(format!("manifest serialisation: {e}")).in_stage("write"))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e).in_stage("write"))?;
    log::info!(
        "{} / {}: psnr {} in {:.1}s",
        cfg.task,
        cfg.prior,
        record.psnr().map_or("-".into(), |p| format!("{p:.2} dB")),
        record.timings.total_s
    );
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub task: Task,
    pub prior: Prior,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub baseline_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, task: Task, prior: Prior) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.task == task && r.prior == prior)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::train::csv_error(path, e))?;
        w.write_record(["task", "prior", "psnr", "ssim", "baseline_psnr"])
            .map_err(|e| crate::train::csv_error(path, e))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        for r in &self.rows {
            w.write_record([
                r.task.to_string(),
                r.prior.to_string(),
                opt(r.psnr),
                opt(r.ssim),
                opt(r.baseline_psnr),
            ])
            .map_err(|e| crate::train::csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
        let mut s = format!(
            "{:<8} {:<10} {:>9} {:>7} {:>9}\n",
            "task", "prior", "psnr", "ssim", "A^T y"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:<10} {:>9} {:>7} {:>9}",
                r.task.name(),
                r.prior.name(),
                opt(r.psnr, 2),
                opt(r.ssim, 4),
                opt(r.baseline_psnr, 2)
            );
        }
        s
    }
}

/// Configs must agree on everything except task, prior and output directory.
fn check_comparable(cfgs: &[ExperimentConfig]) -> Result<()> {
    if cfgs.len() < 2 {
        return Err(Error::config("ablation needs at least two configs"));
    }
    let strip = |c: &ExperimentConfig| ExperimentConfig {
        task: Task::Deconv,
        prior: Prior::PhiInr,
        out: PathBuf::new(),
        ..c.clone()
    };
    let first = strip(&cfgs[0]);
    if let Some(bad) = cfgs.iter().find(|c| strip(c) != first) {
        return Err(Error::config(format!(
            "ablation configs differ beyond task and prior ({} / {})",
            bad.task, bad.prior
        )));
    }
    let mut keys: Vec<(Task, Prior)> = cfgs.iter().map(|c| (c.task, c.prior)).collect();
    keys.sort();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("duplicate task/prior pair in ablation"));
    }
    Ok(())
}

/// Runs every config and tabulates them, rows sorted by task then prior.
pub fn ablate(cfgs: &[ExperimentConfig]) -> Result<AblationTable> {
    check_comparable(cfgs)?;
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let rec = run_experiment(cfg)?;
        rows.push(AblationRow {
            task: cfg.task,
            prior: cfg.prior,
            psnr: rec.psnr(),
            ssim: rec.quality.as_ref().map(|q| q.ssim),
            baseline_psnr: rec.baseline_quality.as_ref().map(|q| q.psnr_db),
        });
    }
    rows.sort_by_key(|r| (r.task, r.prior));
    Ok(AblationTable { rows })
}

/// One config per (task, prior), each writing under `root/<task>-<prior>`.
pub fn ablation_grid(base: &ExperimentConfig, tasks: &[Task], priors: &[Prior], root: &Path) -> Vec<ExperimentConfig> {
    tasks
        .iter()
        .flat_map(|&task| {
            priors.iter().map(move |&prior| ExperimentConfig {
                task,
                prior,
                out: root.join(format!("{task}-{prior}")),
                ..base.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Image {
        Image::from_fn(32, 32, 3, |i, j, c| {
            (0.5 + 0.3 * ((0.3 * j as f64 + c as f64).sin() * (0.2 * i as f64).cos())).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn degrade_shapes_and_determinism() {
        let clean = scene();
        let mut cfg = ExperimentConfig {
            task: Task::Sr2,
            ..Default::default()
        };
        assert_eq!(degrade(&clean, &cfg, 1).unwrap().shape(), (16, 16, 3));
        cfg.obs_noise_std = 0.05;
        assert_eq!(degrade(&clean, &cfg, 1).unwrap(), degrade(&clean, &cfg, 1).unwrap());
        assert_ne!(degrade(&clean, &cfg, 1).unwrap(), degrade(&clean, &cfg, 2).unwrap());
    }

    #[test]
    fn joint_observation_drops_two_thirds_of_channels() {
        let clean = Image::filled(16, 16, 3, 1.0);
        let mosaic = crate::operators::BayerPattern::Rggb.apply(&clean).unwrap();
        let kept: f64 = mosaic.data().iter().map(|v| v * v).sum();
        let full: f64 = clean.data().iter().map(|v| v * v).sum();
        assert!(kept <= full / 3.0 + 1e-12);
    }

    #[test]
    fn comparable_configs_only() {
        let base = ExperimentConfig::default();
        let mut other = base.clone();
        other.seed = 9;
        other.prior = Prior::Tv;
        assert!(check_comparable(&[base.clone(), other]).is_err());
        assert!(check_comparable(std::slice::from_ref(&base)).is_err());
        assert!(check_comparable(&[base.clone(), base.clone()]).is_err());
        let grid = ablation_grid(&base, &Task::ALL, &[Prior::PhiInr, Prior::SirenInr], Path::new("r"));
        assert_eq!(grid.len(), 8);
        assert!(check_comparable(&grid).is_ok());
    }

    #[test]
    fn checksum_is_stable_hex() {
        let m = crate::inr::build_model(&Default::default()).unwrap();
        let c = model_checksum(&m);
        assert_eq!(c.len(), 64);
        assert_eq!(c, model_checksum(&m.clone()));
    }
}
