//! C ABI over `sspnp`.
//!
//! Images and models are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`SspnpStatus`]; on failure the
//! message is available from [`sspnp_last_error`] on the same thread.
//! Pixel data is interleaved row-major `f64` (`(i * width + j) * channels + c`).

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sspnp::admm::{make_schedule, run_admm, AdmmConfig, Denoiser, TvDenoiser};
use sspnp::config::{ExperimentConfig, Prior, Task};
use sspnp::experiment::degrade;
use sspnp::inr::{load_model, save_model, DenoiserModel};
use sspnp::io::{load_image, save_image};
use sspnp::metrics::{psnr, ssim};
use sspnp::train::train_single_shot;
use sspnp::{Error, Image};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SspnpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numeric = 4,
    Config = 5,
    Training = 6,
    NonFiniteIterate = 7,
    Io = 8,
    Format = 9,
    Contract = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SspnpTask {
    Deconv = 0,
    Sr2 = 1,
    Sr4 = 2,
    Joint = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SspnpPrior {
    PhiInr = 0,
    SirenInr = 1,
    Tv = 2,
}

/// ADMM settings for [`sspnp_solve`]; start from [`sspnp_solve_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SspnpSolveOptions {
    pub iterations: usize,
    /// Noise levels on the 0-255 scale.
    pub sigma_hi: f64,
    pub sigma_lo: f64,
    pub mu_base: f64,
    /// Nonzero returns z^K, zero returns x^K.
    pub return_z: i32,
}

/// Opaque image handle.
pub struct SspnpImage(Image);

/// Opaque trained-denoiser handle.
pub struct SspnpModel(DenoiserModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SspnpStatus {
    match e {
        Error::Dimension(_) => SspnpStatus::Dimension,
        Error::Numeric(_) => SspnpStatus::Numeric,
        Error::Contract(_) => SspnpStatus::Contract,
        Error::Config(_) => SspnpStatus::Config,
        Error::Training { .. } => SspnpStatus::Training,
        Error::NonFiniteIterate { .. } => SspnpStatus::NonFiniteIterate,
        Error::Io { .. } => SspnpStatus::Io,
        Error::Format { .. } => SspnpStatus::Format,
        Error::Stage { source, .. } => status_of(source),
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SspnpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SspnpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} must not be null"));
            SspnpStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            SspnpStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SspnpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::Invalid("path is not valid UTF-8".into()))
}

fn task_of(t: SspnpTask) -> Task {
    match t {
        SspnpTask::Deconv => Task::Deconv,
        SspnpTask::Sr2 => Task::Sr2,
        SspnpTask::Sr4 => Task::Sr4,
        SspnpTask::Joint => Task::Joint,
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sspnp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sspnp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New image of the given shape. `data` holds `height*width*channels`
/// values, or is null for an all-zero image.
#[no_mangle]
pub unsafe extern "C" fn sspnp_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut SspnpImage,
) -> SspnpStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Failure::Invalid("image size overflows".into()))?;
        let values = if data.is_null() {
            vec![0.0; len]
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        *out = boxed(SspnpImage(Image::from_vec(height, width, channels, values)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sspnp_image_free(img: *mut SspnpImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sspnp_image_shape(
    img: *const SspnpImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> SspnpStatus {
    guard(|| {
        let (h, w, c) = deref(img, "img")?.0.shape();
        *out_slot(height, "height")? = h;
        *out_slot(width, "width")? = w;
        *out_slot(channels, "channels")? = c;
        Ok(())
    })
}

/// Borrowed pointer to the pixel data, valid while `img` lives; null if
/// `img` is null.
#[no_mangle]
pub unsafe extern "C" fn sspnp_image_data(img: *const SspnpImage) -> *const f64 {
    img.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn sspnp_image_load(path: *const c_char, out: *mut *mut SspnpImage) -> SspnpStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = boxed(SspnpImage(load_image(path_arg(path)?)?));
        Ok(())
    })
}

/// Saves as 8-bit PNG/PPM, chosen by extension.
#[no_mangle]
pub unsafe extern "C" fn sspnp_image_save(img: *const SspnpImage, path: *const c_char) -> SspnpStatus {
    guard(|| {
        save_image(&deref(img, "img")?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Applies the task's forward operator (noise-free).
#[no_mangle]
pub unsafe extern "C" fn sspnp_degrade(
    clean: *const SspnpImage,
    task: SspnpTask,
    out: *mut *mut SspnpImage,
) -> SspnpStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let cfg = ExperimentConfig {
            task: task_of(task),
            ..Default::default()
        };
        *out = boxed(SspnpImage(degrade(&deref(clean, "clean")?.0, &cfg, 0)?));
        Ok(())
    })
}

/// Trains the single-shot denoiser on `observation` with default settings
/// and `iterations` Adam steps. `prior` must be a learned prior.
#[no_mangle]
pub unsafe extern "C" fn sspnp_train(
    observation: *const SspnpImage,
    task: SspnpTask,
    prior: SspnpPrior,
    seed: u64,
    iterations: usize,
    out: *mut *mut SspnpModel,
) -> SspnpStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let y = &deref(observation, "observation")?.0;
        let prior = match prior {
            SspnpPrior::PhiInr => Prior::PhiInr,
            SspnpPrior::SirenInr => Prior::SirenInr,
            SspnpPrior::Tv => return Err(Failure::Invalid("the tv prior has nothing to train".into())),
        };
        let cfg = ExperimentConfig {
            task: task_of(task),
            prior,
            seed,
            train_iters: iterations,
            ..Default::default()
        };
        let train_image = cfg.task.operator().normalize_observation(y)?;
        let outcome = train_single_shot(&train_image, &cfg.model_config(y.channels())?, &cfg.train_config())?;
        *out = boxed(SspnpModel(outcome.model));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sspnp_model_free(model: *mut SspnpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sspnp_model_save(model: *const SspnpModel, path: *const c_char) -> SspnpStatus {
    guard(|| {
        save_model(&deref(model, "model")?.0, path_arg(path)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sspnp_model_load(path: *const c_char, out: *mut *mut SspnpModel) -> SspnpStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = boxed(SspnpModel(load_model(path_arg(path)?)?));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn sspnp_solve_options_default() -> SspnpSolveOptions {
    let d = ExperimentConfig::default();
    SspnpSolveOptions {
        iterations: d.admm_iters,
        sigma_hi: d.sigma_hi,
        sigma_lo: d.sigma_lo,
        mu_base: d.mu_base,
        return_z: i32::from(d.return_z),
    }
}

/// Restores `observation`. A null `model` selects the TV prior; a null
/// `options` uses the defaults.
#[no_mangle]
pub unsafe extern "C" fn sspnp_solve(
    observation: *const SspnpImage,
    task: SspnpTask,
    model: *const SspnpModel,
    options: *const SspnpSolveOptions,
    out: *mut *mut SspnpImage,
) -> SspnpStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let y = &deref(observation, "observation")?.0;
        let opts = options
            .as_ref()
            .copied()
            .unwrap_or_else(|| sspnp_solve_options_default());
        let mut cfg = AdmmConfig::new(make_schedule(
            opts.iterations,
            opts.sigma_hi / 255.0,
            opts.sigma_lo / 255.0,
            opts.mu_base,
        )?);
        cfg.return_z = opts.return_z != 0;
        let tv = TvDenoiser::default();
        let denoiser: &dyn Denoiser = match model.as_ref() {
            Some(m) => &m.0,
            None => &tv,
        };
        let outcome = run_admm(y, &task_of(task).operator(), denoiser, &cfg, None)?;
        *out = boxed(SspnpImage(outcome.output));
        Ok(())
    })
}

/// PSNR in dB with unit peak.
#[no_mangle]
pub unsafe extern "C" fn sspnp_psnr(a: *const SspnpImage, b: *const SspnpImage, out: *mut f64) -> SspnpStatus {
    guard(|| {
        *out_slot(out, "out")? = psnr(&deref(a, "a")?.0, &deref(b, "b")?.0, 1.0)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sspnp_ssim(a: *const SspnpImage, b: *const SspnpImage, out: *mut f64) -> SspnpStatus {
    guard(|| {
        *out_slot(out, "out")? = ssim(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        Ok(())
    })
}
