//! Experiment configuration: a flat `key = value` text format.
//!
//! Blank lines and `#` comments are ignored, keys accept `-` or `_`.
//! Noise levels `sigma_hi` / `sigma_lo` are written on the 0–255 scale.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::admm::{make_schedule, AdmmConfig, AdmmSchedule, Initialization, TvDenoiser, MU_BASE};
use crate::error::{Error, Result};
use crate::inr::{Activation, ModelConfig, PhiParams};
use crate::operators::{BayerPattern, ForwardOperator, GaussianKernel};
use crate::prox::{ProxConfig, ProxMethod};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Deconv,
    Sr2,
    Sr4,
    Joint,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Deconv, Task::Sr2, Task::Sr4, Task::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Task::Deconv => "deconv",
            Task::Sr2 => "sr2",
            Task::Sr4 => "sr4",
            Task::Joint => "joint",
        }
    }

    /// deconv: 15×15, std 5. sr: 5×5, std 3. joint: 15×15, std 5 over RGGB.
    pub fn operator(self) -> ForwardOperator {
        let wide = || GaussianKernel::new(15, 5.0).expect("fixed kernel");
        let narrow = || GaussianKernel::new(5, 3.0).expect("fixed kernel");
        match self {
            Task::Deconv => ForwardOperator::Deconv { kernel: wide() },
            Task::Sr2 => ForwardOperator::SuperRes {
                kernel: narrow(),
                scale: 2,
            },
            Task::Sr4 => ForwardOperator::SuperRes {
                kernel: narrow(),
                scale: 4,
            },
            Task::Joint => ForwardOperator::Joint {
                kernel: wide(),
                pattern: BayerPattern::Rggb,
            },
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task {s:?} (deconv, sr2, sr4, joint)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prior {
    PhiInr,
    SirenInr,
    Tv,
}

impl Prior {
    pub const ALL: [Prior; 3] = [Prior::PhiInr, Prior::SirenInr, Prior::Tv];

    pub fn name(self) -> &'static str {
        match self {
            Prior::PhiInr => "phi-inr",
            Prior::SirenInr => "siren-inr",
            Prior::Tv => "tv",
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Prior::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown prior {s:?} (phi-inr, siren-inr, tv)")))
    }
}

/// Everything that determines a run. Serialised verbatim into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub prior: Prior,
    /// Clean image, degraded by the task operator before restoration.
    pub input: Option<PathBuf>,
    /// Already-degraded observation; skips `degrade` when set.
    pub observation: Option<PathBuf>,
    /// Clean image for metrics when `observation` is used.
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Resize the loaded clean image to `(width, height)` first.
    pub resize: Option<(usize, usize)>,
    /// Gaussian noise added to the observation.
    pub obs_noise_std: f64,

    pub train_iters: usize,
    pub noise_std: f64,
    pub lr: f64,
    pub resample_noise: bool,
    pub hidden_dim: usize,
    pub depth: usize,
    pub phi: [f64; 4],
    pub siren_omega: f64,

    pub admm_iters: usize,
    /// On the 0–255 scale.
    pub sigma_hi: f64,
    pub sigma_lo: f64,
    pub mu_base: f64,
    pub return_z: bool,
    pub random_init: bool,

    pub prox_method: String,
    pub cg_tol: f64,
    pub cg_max_iters: usize,

    pub tv_weight: f64,
    pub tv_iters: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let phi = PhiParams::default();
        let train = TrainConfig::default();
        let prox = ProxConfig::default();
        let tv = TvDenoiser::default();
        Self {
            task: Task::Deconv,
            prior: Prior::PhiInr,
            input: None,
            observation: None,
            reference: None,
            out: PathBuf::from("out"),
            seed: 0,
            resize: None,
            obs_noise_std: 0.0,
            train_iters: train.iterations,
            noise_std: train.noise_std,
            lr: train.lr,
            resample_noise: train.resample_noise,
            hidden_dim: 64,
            depth: 2,
            phi: [phi.a1, phi.b1, phi.a2, phi.b2],
            siren_omega: 30.0,
            admm_iters: 5,
            sigma_hi: 35.0,
            sigma_lo: 30.0,
            mu_base: MU_BASE,
            return_z: true,
            random_init: false,
            prox_method: "auto".into(),
            cg_tol: prox.cg_tol,
            cg_max_iters: prox.cg_max_iters,
            tv_weight: tv.weight,
            tv_iters: tv.iterations,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Sets one key. Used by both the file parser and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "task" => self.task = value.parse()?,
            "prior" => self.prior = value.parse()?,
            "input" => self.input = optional_path(value),
            "observation" => self.observation = optional_path(value),
            "reference" => self.reference = optional_path(value),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(&key, value)?,
            "resize" => {
                self.resize = if value.is_empty() {
                    None
                } else {
                    let (w, h) = value
                        .split_once('x')
                        .ok_or_else(|| Error::config(format!("resize: expected WIDTHxHEIGHT, got {value:?}")))?;
                    Some((parse(&key, w)?, parse(&key, h)?))
                }
            }
            "obs_noise_std" => self.obs_noise_std = parse(&key, value)?,
            "train_iters" => self.train_iters = parse(&key, value)?,
            "noise_std" => self.noise_std = parse(&key, value)?,
            "lr" => self.lr = parse(&key, value)?,
            "resample_noise" => self.resample_noise = parse_bool(&key, value)?,
            "hidden_dim" => self.hidden_dim = parse(&key, value)?,
            "depth" => self.depth = parse(&key, value)?,
            "a1" => self.phi[0] = parse(&key, value)?,
            "b1" => self.phi[1] = parse(&key, value)?,
            "a2" => self.phi[2] = parse(&key, value)?,
            "b2" => self.phi[3] = parse(&key, value)?,
            "siren_omega" => self.siren_omega = parse(&key, value)?,
            "admm_iters" => self.admm_iters = parse(&key, value)?,
            "sigma_hi" => self.sigma_hi = parse(&key, value)?,
            "sigma_lo" => self.sigma_lo = parse(&key, value)?,
            "mu_base" => self.mu_base = parse(&key, value)?,
            "return_z" => self.return_z = parse_bool(&key, value)?,
            "random_init" => self.random_init = parse_bool(&key, value)?,
            "prox_method" => {
                parse_prox_method(value)?;
                self.prox_method = value.to_string();
            }
            "cg_tol" => self.cg_tol = parse(&key, value)?,
            "cg_max_iters" => self.cg_max_iters = parse(&key, value)?,
            "tv_weight" => self.tv_weight = parse(&key, value)?,
            "tv_iters" => self.tv_iters = parse(&key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// The file form of this config; parses back to an equal value.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let resize = self.resize.map_or(String::new(), |(w, h)| format!("{w}x{h}"));
        let pairs: Vec<(&str, String)> = vec![
            ("task", self.task.to_string()),
            ("prior", self.prior.to_string()),
            ("input", path(&self.input)),
            ("observation", path(&self.observation)),
            ("reference", path(&self.reference)),
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("resize", resize),
            ("obs_noise_std", self.obs_noise_std.to_string()),
            ("train_iters", self.train_iters.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("lr", self.lr.to_string()),
            ("resample_noise", self.resample_noise.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("depth", self.depth.to_string()),
            ("a1", self.phi[0].to_string()),
            ("b1", self.phi[1].to_string()),
            ("a2", self.phi[2].to_string()),
            ("b2", self.phi[3].to_string()),
            ("siren_omega", self.siren_omega.to_string()),
            ("admm_iters", self.admm_iters.to_string()),
            ("sigma_hi", self.sigma_hi.to_string()),
            ("sigma_lo", self.sigma_lo.to_string()),
            ("mu_base", self.mu_base.to_string()),
            ("return_z", self.return_z.to_string()),
            ("random_init", self.random_init.to_string()),
            ("prox_method", self.prox_method.clone()),
            ("cg_tol", self.cg_tol.to_string()),
            ("cg_max_iters", self.cg_max_iters.to_string()),
            ("tv_weight", self.tv_weight.to_string()),
            ("tv_iters", self.tv_iters.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn activation(&self) -> Result<Activation> {
        Ok(match self.prior {
            Prior::SirenInr => Activation::Sine {
                first_omega: self.siren_omega,
                hidden_omega: 1.0,
            },
            _ => {
                let [a1, b1, a2, b2] = self.phi;
                Activation::Phi(PhiParams::new(a1, b1, a2, b2)?)
            }
        })
    }

    pub fn model_config(&self, channels: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            channels,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            activation: self.activation()?,
            seed: self.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            noise_std: self.noise_std,
            iterations: self.train_iters,
            lr: self.lr,
            seed: self.seed,
            resample_noise: self.resample_noise,
            log_path: None,
        }
    }

    pub fn schedule(&self) -> Result<AdmmSchedule> {
        make_schedule(
            self.admm_iters,
            self.sigma_hi / 255.0,
            self.sigma_lo / 255.0,
            self.mu_base,
        )
    }

    pub fn prox_config(&self) -> Result<ProxConfig> {
        let cfg = ProxConfig {
            method: parse_prox_method(&self.prox_method)?,
            cg_tol: self.cg_tol,
            cg_max_iters: self.cg_max_iters,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn admm_config(&self) -> Result<AdmmConfig> {
        Ok(AdmmConfig {
            schedule: self.schedule()?,
            prox: self.prox_config()?,
            init: if self.random_init {
                Initialization::Random { seed: self.seed }
            } else {
                Initialization::Adjoint
            },
            return_z: self.return_z,
        })
    }

    pub fn tv(&self) -> TvDenoiser {
        TvDenoiser {
            weight: self.tv_weight,
            iterations: self.tv_iters,
        }
    }

    /// Checks every derived setting without running anything.
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.activation()?;
        self.admm_config()?;
        if !(self.obs_noise_std >= 0.0) {
            return Err(Error::config("obs_noise_std must be >= 0"));
        }
        if self.input.is_none() && self.observation.is_none() {
            return Err(Error::config("set input (clean image) or observation"));
        }
        Ok(())
    }
}

fn parse_prox_method(value: &str) -> Result<ProxMethod> {
    match value {
        "auto" => Ok(ProxMethod::Auto),
        "fft" => Ok(ProxMethod::Fft),
        "cg" => Ok(ProxMethod::Cg),
        _ => Err(Error::config(format!(
            "prox_method: expected auto, fft or cg, got {value:?}"
        ))),
    }
}
