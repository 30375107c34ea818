//! Plug-and-play ADMM with a frozen denoiser.
//!
//! ```text
//! x⁰ = Aᵀy, z⁰ = x⁰
//! e^{k+1} = H(z^k − x^k)
//! z^{k+1} = prox_{D/μ_k}(e^{k+1} + x^k)
//! x^{k+1} = x^k + e^{k+1} − z^{k+1}
//! ```

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::inr::{apply_denoiser, DenoiserModel};
use crate::metrics;
use crate::operators::ForwardOperator;
use crate::prox::{prox_data, tv_denoise, ProxConfig};

pub const SIGMA_HI: f64 = 35.0 / 255.0;
pub const SIGMA_LO: f64 = 30.0 / 255.0;
pub const MU_BASE: f64 = 0.3;

/// Noise levels and penalty weights, one pair per iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmSchedule {
    sigma: Vec<f64>,
    mu: Vec<f64>,
}

impl AdmmSchedule {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
}

/// Log-spaced `σ` from `sigma_hi` down to `sigma_lo` over `k` steps, with
/// `μ_k = mu_base·(σ_0/σ_k)²`.
pub fn make_schedule(k: usize, sigma_hi: f64, sigma_lo: f64, mu_base: f64) -> Result<AdmmSchedule> {
    if k == 0 {
        return Err(Error::config("schedule needs at least one iteration"));
    }
    if !(sigma_lo > 0.0) || !(sigma_hi >= sigma_lo) || !sigma_hi.is_finite() {
        return Err(Error::config(format!(
            "need sigma_hi >= sigma_lo > 0, got {sigma_hi} and {sigma_lo}"
        )));
    }
    if !(mu_base > 0.0) || !mu_base.is_finite() {
        return Err(Error::config(format!("mu_base must be positive, got {mu_base}")));
    }
    let (lh, ll) = (sigma_hi.ln(), sigma_lo.ln());
    let sigma: Vec<f64> = (0..k)
        .map(|i| match (i, k) {
            (0, _) => sigma_hi,
            (i, k) if i == k - 1 => sigma_lo,
            _ => {
                let t = i as f64 / (k - 1) as f64;
                (lh + t * (ll - lh)).exp()
            }
        })
        .collect();
    let mu = sigma.iter().map(|s| mu_base * (sigma[0] / s).powi(2)).collect();
    Ok(AdmmSchedule { sigma, mu })
}

/// The prior step `H` of the iteration.
pub trait Denoiser {
    fn denoise(&self, img: &Image) -> Result<Image>;
    fn name(&self) -> &str;
}

impl Denoiser for DenoiserModel {
    fn denoise(&self, img: &Image) -> Result<Image> {
        apply_denoiser(self, img)
    }

    fn name(&self) -> &str {
        match self.activation() {
            crate::inr::Activation::Phi(_) => "phi-inr",
            crate::inr::Activation::Sine { .. } => "siren-inr",
            crate::inr::Activation::Relu => "relu-inr",
        }
    }
}

/// Chambolle TV denoising as a classical prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvDenoiser {
    pub weight: f64,
    pub iterations: usize,
}

impl Default for TvDenoiser {
    fn default() -> Self {
        Self {
            weight: 0.1,
            iterations: 20,
        }
    }
}

impl Denoiser for TvDenoiser {
    fn denoise(&self, img: &Image) -> Result<Image> {
        tv_denoise(img, self.weight, self.iterations)
    }

    fn name(&self) -> &str {
        "tv"
    }
}

/// `H(v) = v`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, img: &Image) -> Result<Image> {
        Ok(img.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    /// `z⁰ = Aᵀy`.
    #[default]
    Adjoint,
    /// `z⁰` uniform in `[0, 1]`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub schedule: AdmmSchedule,
    pub prox: ProxConfig,
    pub init: Initialization,
    /// Return `z^K` (the prox output) instead of `x^K`.
    pub return_z: bool,
}

impl AdmmConfig {
    pub fn new(schedule: AdmmSchedule) -> Self {
        Self {
            schedule,
            prox: ProxConfig::default(),
            init: Initialization::Adjoint,
            return_z: true,
        }
    }
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self::new(make_schedule(5, SIGMA_HI, SIGMA_LO, MU_BASE).expect("default schedule"))
    }
}

/// One logged iteration; `k` is 0-based, the record describes `z^{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub sigma: f64,
    pub mu: f64,
    /// Quality of `z^{k+1}` against the reference, when one is given.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub psnr_x: Option<f64>,
    /// `‖A z^{k+1} − y‖ / ‖y‖`.
    pub data_residual: f64,
    /// `max |x^{k+1} − x^k − e^{k+1} + z^{k+1}|`.
    pub update_error: f64,
    /// Seconds since the loop started.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    /// `z^K` or `x^K`, per [`AdmmConfig::return_z`].
    pub output: Image,
    pub x: Image,
    pub z: Image,
    pub e: Image,
    /// `Aᵀy`.
    pub initial: Image,
    pub history: Vec<IterationRecord>,
}

pub fn run_admm(
    y: &Image,
    op: &ForwardOperator,
    denoiser: &dyn Denoiser,
    cfg: &AdmmConfig,
    reference: Option<&Image>,
) -> Result<AdmmOutcome> {
    cfg.prox.validate()?;
    if cfg.schedule.is_empty() {
        return Err(Error::config("empty ADMM schedule"));
    }
    let latent = op.latent_shape(y.shape());
    if op.observation_shape(latent)? != y.shape() {
        return Err(Error::dim(format!(
            "observation {:?} is not a valid output of the operator",
            y.shape()
        )));
    }
    if let Some(r) = reference {
        if r.shape() != latent {
            return Err(Error::dim(format!(
                "reference shape {:?} does not match the reconstruction grid {latent:?}",
                r.shape()
            )));
        }
    }
    let start = Instant::now();
    let initial = op.adjoint(y)?;
    let mut x = initial.clone();
    let mut z = match cfg.init {
        Initialization::Adjoint => initial.clone(),
        Initialization::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Image::from_fn(latent.0, latent.1, latent.2, |_, _, _| rng.random_range(0.0..1.0))
        }
    };
    let mut e = Image::zeros(latent.0, latent.1, latent.2);
    let y_norm = y.norm();
    let mut history = Vec::with_capacity(cfg.schedule.len());

    for (k, (&sigma, &mu)) in cfg.schedule.sigma.iter().zip(&cfg.schedule.mu).enumerate() {
        e = denoiser.denoise(&z.sub(&x))?;
        check_finite(&e, k, "e")?;
        z = prox_data(&e.add(&x), y, op, 1.0 / mu, &cfg.prox)?;
        check_finite(&z, k, "z")?;
        let x_next = x.add(&e).sub(&z);
        check_finite(&x_next, k, "x")?;
        let update_error = x_next
            .data()
            .iter()
            .zip(x.data())
            .zip(e.data().iter().zip(z.data()))
            .map(|((xn, xo), (ev, zv))| (xn - xo - ev + zv).abs())
            .fold(0.0, f64::max);
        x = x_next;

        let residual = op.apply(&z)?.sub(y).norm();
        let (psnr, ssim, psnr_x) = match reference {
            Some(r) => {
                let zc = z.clamp01();
                (
                    Some(metrics::psnr(&zc, r, 1.0)?),
                    ssim_if_large_enough(&zc, r)?,
                    Some(metrics::psnr(&x.clamp01(), r, 1.0)?),
                )
            }
            None => (None, None, None),
        };
        let record = IterationRecord {
            k,
            sigma,
            mu,
            psnr,
            ssim,
            psnr_x,
            data_residual: if y_norm > 0.0 { residual / y_norm } else { residual },
            update_error,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "admm k={k} sigma={:.2}/255 mu={mu:.4} psnr(z)={} residual={:.3e}",
            sigma * 255.0,
            psnr.map_or("-".to_string(), |p| format!("{p:.2}")),
            record.data_residual
        );
        history.push(record);
    }
    let output = if cfg.return_z { z.clamp01() } else { x.clamp01() };
    Ok(AdmmOutcome {
        output,
        x,
        z,
        e,
        initial,
        history,
    })
}

fn ssim_if_large_enough(a: &Image, b: &Image) -> Result<Option<f64>> {
    if a.height() < metrics::SSIM_WINDOW || a.width() < metrics::SSIM_WINDOW {
        return Ok(None);
    }
    metrics::ssim(a, b).map(Some)
}

fn check_finite(img: &Image, iteration: usize, variable: &'static str) -> Result<()> {
    if img.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteIterate { iteration, variable })
    }
}

/// Writes `k,sigma_k,mu_k,psnr,ssim,data_residual` plus diagnostics.
pub fn write_history_csv(path: &Path, history: &[IterationRecord]) -> Result<()> {
    use crate::train::csv_error;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "k",
        "sigma_k",
        "mu_k",
        "psnr",
        "ssim",
        "data_residual",
        "psnr_x",
        "update_error",
        "elapsed_s",
    ])
    .map_err(|e| csv_error(path, e))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in history {
        w.write_record([
            r.k.to_string(),
            r.sigma.to_string(),
            r.mu.to_string(),
            opt(r.psnr),
            opt(r.ssim),
            r.data_residual.to_string(),
            opt(r.psnr_x),
            r.update_error.to_string(),
            r.elapsed_s.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
