//! Single-shot training of the pixelwise denoiser on one observation.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::inr::{build_model, pixel_features, DenoiserModel, ModelConfig};
use crate::ndgrad::{Adam, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Standard deviation of the synthetic training noise.
    pub noise_std: f64,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Draw fresh noise every iteration; `false` reuses one draw.
    pub resample_noise: bool,
    /// Per-iteration loss CSV (`iteration,mse`).
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            iterations: 100,
            lr: 0.001,
            seed: 0,
            resample_noise: true,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::config(format!(
                "noise std must be positive, got {}",
                self.noise_std
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    /// MSE before each update, one entry per iteration.
    pub losses: Vec<f64>,
}

/// `img + N(0, std²)` per element, clamped to `[0, 1]`.
pub fn add_noise(img: &Image, std: f64, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noisy_copy(img, std, &mut rng)
}

fn noisy_copy(img: &Image, std: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    if !(std > 0.0) {
        return Err(Error::config(format!("noise std must be positive, got {std}")));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::config(format!("noise std {std}: {e}")))?;
    Ok(img.map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)))
}

/// Fits a freshly initialised model so that it maps `y + noise` back to `y`.
///
/// Full-image batches, Adam, mean squared error. With zero iterations the
/// initial model is returned as is.
pub fn train_single_shot(y: &Image, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model_cfg.channels != y.channels() {
        return Err(Error::dim(format!(
            "model configured for {} channels, image has {}",
            model_cfg.channels,
            y.channels()
        )));
    }
    let mut model = build_model(model_cfg)?;
    let mut params = model.parameters();
    let mut adam = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = y.pixel_count();
    let target = Tensor::new([n, y.channels()], y.data().to_vec())?;
    let mut fixed_input = None;
    let mut losses = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let features = match (&fixed_input, cfg.resample_noise) {
            (Some(f), false) => Tensor::clone(f),
            _ => {
                let f = pixel_features(&noisy_copy(y, cfg.noise_std, &mut rng)?);
                if !cfg.resample_noise {
                    fixed_input = Some(f.clone());
                }
                f
            }
        };
        let mut tape = Tape::new();
        let x = tape.constant(features);
        let t = tape.constant(target.clone());
        let handles: Vec<Var> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let step = (|| {
            let out = model.record_forward(&mut tape, x, &handles)?;
            let diff = tape.sub(out, t)?;
            let sq = tape.square(diff)?;
            let loss = tape.mean(sq)?;
            let value = tape.value(loss).item()?;
            let mut grads = tape.backward(loss)?;
            Ok::<_, Error>((value, handles.iter().map(|&h| grads.take(h)).collect::<Vec<_>>()))
        })();
        let (loss, grads) = step.map_err(|e| Error::Training {
            iteration,
            reason: e.to_string(),
        })?;
        if !loss.is_finite() {
            return Err(Error::Training {
                iteration,
                reason: format!("loss is {loss}"),
            });
        }
        losses.push(loss);
        log::debug!("train iteration {iteration}: mse {loss:.6e}");
        for (p, g) in params.iter_mut().zip(grads) {
            p.grad = g;
        }
        adam.step(&mut params).map_err(|e| Error::Training {
            iteration,
            reason: e.to_string(),
        })?;
    }
    model.load_parameters(&params)?;
    if let Some(path) = &cfg.log_path {
        write_loss_csv(path, &losses)?;
    }
    Ok(TrainOutcome { model, losses })
}

pub fn write_loss_csv(path: &std::path::Path, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["iteration", "mse"]).map_err(|e| csv_error(path, e))?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &std::path::Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}
