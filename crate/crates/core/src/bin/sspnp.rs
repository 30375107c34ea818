use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sspnp::admm::{run_admm, write_history_csv, Denoiser};
use sspnp::config::{ExperimentConfig, Prior, Task};
use sspnp::experiment::{ablate, ablation_grid, degrade, run_experiment};
use sspnp::inr::{load_model, save_model};
use sspnp::io::{load_image, save_image, save_image_16};
use sspnp::metrics::quality;
use sspnp::train::{train_single_shot, write_loss_csv};
use sspnp::{Error, Result};

#[derive(Parser)]
#[command(name = "sspnp", version, about = "Single-shot plug-and-play image restoration")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a task's forward operator to a clean image.
    Degrade {
        #[command(flatten)]
        common: Common,
        /// Also write a 16-bit PNG (lossless enough to solve from).
        #[arg(long)]
        sixteen_bit: bool,
    },
    /// Train the single-shot denoiser on an observation.
    TrainDenoiser(Common),
    /// Restore an observation with a trained model or the TV prior.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Model written by train-denoiser; omit for --prior tv.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Degrade, train, restore and measure in one go.
    Run(Common),
    /// Run a task x prior grid and print a comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated tasks.
        #[arg(long, default_value = "deconv,sr2,sr4,joint")]
        tasks: String,
        /// Comma-separated priors.
        #[arg(long, default_value = "phi-inr,siren-inr,tv")]
        priors: String,
    },
    /// PSNR and SSIM of --input against --reference.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
}

/// Flags shared by the pipeline commands; they override the config file.
#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_iters: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    admm_iters: Option<usize>,
    /// On the 0-255 scale.
    #[arg(long)]
    sigma_hi: Option<f64>,
    #[arg(long)]
    sigma_lo: Option<f64>,
    #[arg(long)]
    mu_base: Option<f64>,
    /// Output z^K (true) or x^K (false).
    #[arg(long)]
    return_z: Option<bool>,
    /// Any other config key, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let path = |p: &PathBuf| p.display().to_string();
        macro_rules! push {
            ($key:literal, $field:expr) => {
                if let Some(v) = &$field {
                    pairs.push(($key, v.to_string()));
                }
            };
        }
        push!("task", self.task);
        push!("prior", self.prior);
        push!("seed", self.seed);
        push!("train_iters", self.train_iters);
        push!("noise_std", self.noise_std);
        push!("admm_iters", self.admm_iters);
        push!("sigma_hi", self.sigma_hi);
        push!("sigma_lo", self.sigma_lo);
        push!("mu_base", self.mu_base);
        push!("return_z", self.return_z);
        if let Some(p) = &self.input {
            pairs.push(("input", path(p)));
        }
        if let Some(p) = &self.reference {
            pairs.push(("reference", path(p)));
        }
        if let Some(p) = &self.out {
            pairs.push(("out", path(p)));
        }
        for (k, v) in pairs {
            cfg.set(k, &v)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{flag} is required")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Degrade { common, sixteen_bit } => {
            let cfg = common.config()?;
            let clean = load_image(required(&cfg.input, "--input")?)?;
            let y = degrade(&clean, &cfg, cfg.seed)?;
            let out = if common.out.is_some() {
                cfg.out.clone()
            } else {
                PathBuf::from("observation.png")
            };
            if sixteen_bit {
                save_image_16(&y, &out)?;
            } else {
                save_image(&y, &out)?;
            }
            println!("{} observation {:?} -> {}", cfg.task, y.shape(), out.display());
        }
        Command::TrainDenoiser(common) => {
            let cfg = common.config()?;
            if cfg.prior == Prior::Tv {
                return Err(Error::Config("the tv prior has nothing to train".into()));
            }
            let y = load_image(required(&cfg.input, "--input")?)?;
            let op = cfg.task.operator();
            let train_image = op.normalize_observation(&y)?;
            let outcome = train_single_shot(&train_image, &cfg.model_config(y.channels())?, &cfg.train_config())?;
            let out = if common.out.is_some() {
                cfg.out.clone()
            } else {
                PathBuf::from("model.bin")
            };
            save_model(&outcome.model, &out)?;
            write_loss_csv(&out.with_extension("loss.csv"), &outcome.losses)?;
            println!(
                "trained {} for {} iterations, final mse {:.6} -> {}",
                cfg.prior,
                outcome.losses.len(),
                outcome.losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Solve { common, model } => {
            let cfg = common.config()?;
            let y = load_image(required(&cfg.input, "--input")?)?;
            let reference = cfg.reference.as_deref().map(load_image).transpose()?;
            let op = cfg.task.operator();
            let loaded = model.as_deref().map(load_model).transpose()?;
            let tv = cfg.tv();
            let denoiser: &dyn Denoiser = match (&loaded, cfg.prior) {
                (Some(m), _) => m,
                (None, Prior::Tv) => &tv,
                (None, _) => return Err(Error::Config("--model is required unless --prior tv".into())),
            };
            let outcome = run_admm(&y, &op, denoiser, &cfg.admm_config()?, reference.as_ref())?;
            std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Io {
                path: cfg.out.clone(),
                source: e,
            })?;
            save_image(&outcome.output, cfg.out.join("reconstruction.png"))?;
            write_history_csv(&cfg.out.join("history.csv"), &outcome.history)?;
            if let Some(r) = &reference {
                let q = quality(&outcome.output, r)?;
                println!("psnr {:.2} dB  ssim {:.4}", q.psnr_db, q.ssim);
            }
            println!("wrote {}", cfg.out.join("reconstruction.png").display());
        }
        Command::Run(common) => {
            let cfg = common.config()?;
            let rec = run_experiment(&cfg)?;
            if let (Some(q), Some(b)) = (&rec.quality, &rec.baseline_quality) {
                println!(
                    "{} / {}: psnr {:.2} dB (A^T y {:.2} dB)  ssim {:.4}",
                    cfg.task, cfg.prior, q.psnr_db, b.psnr_db, q.ssim
                );
            }
            println!("manifest {}", cfg.out.join("manifest.json").display());
        }
        Command::Ablate { common, tasks, priors } => {
            let base = common.config()?;
            let tasks = tasks
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<Result<Vec<Task>>>()?;
            let priors = priors
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<Vec<Prior>>>()?;
            let grid = ablation_grid(&base, &tasks, &priors, &base.out);
            let table = ablate(&grid)?;
            table.write_csv(&base.out.join("ablation.csv"))?;
            let text = table.to_text();
            std::fs::write(base.out.join("ablation.txt"), &text).map_err(|e| Error::Io {
                path: base.out.join("ablation.txt"),
                source: e,
            })?;
            print!("{text}");
        }
        Command::Metrics { input, reference } => {
            let q = quality(&load_image(&input)?, &load_image(&reference)?)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&q).map_err(|e| Error::Contract(e.to_string()))?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
