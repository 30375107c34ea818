//! PSNR and SSIM.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_CEILING_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_channel: Vec<ChannelQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelQuality {
    pub psnr_db: f64,
    pub ssim: f64,
}

fn mse_to_psnr(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CEILING_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CEILING_DB)
    }
}

/// `10·log10(peak² / MSE)` over all samples.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(mse_to_psnr(mse, peak))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable Gaussian filter, "valid" region only.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * plane[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(i + k) * ow + j]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let e_aa = filter_valid(&aa, h, w, &win);
    let e_bb = filter_valid(&bb, h, w, &win);
    let e_ab = filter_valid(&ab, h, w, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for k in 0..n {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let var_a = e_aa[k] - ma * ma;
        let var_b = e_bb[k] - mb * mb;
        let cov = e_ab[k] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / n as f64
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5, unit data range), computed
/// per channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(quality(a, b)?.ssim)
}

pub fn quality(a: &Image, b: &Image) -> Result<QualityReport> {
    a.check_same_shape(b, "quality")?;
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let mut per_channel = Vec::with_capacity(c);
    for ch in 0..c {
        let pa = a.channel(ch);
        let pb = b.channel(ch);
        let mse = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pa.len() as f64;
        // identical planes short-circuit to exactly 1
        let s = if pa == pb { 1.0 } else { ssim_plane(&pa, &pb, h, w) };
        per_channel.push(ChannelQuality {
            psnr_db: mse_to_psnr(mse, 1.0),
            ssim: s,
        });
    }
    Ok(QualityReport {
        psnr_db: psnr(a, b, 1.0)?,
        ssim: per_channel.iter().map(|q| q.ssim).sum::<f64>() / c as f64,
        per_channel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn test_card(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |i, j, c| {
            let x = j as f64 / w as f64;
            let y = i as f64 / h as f64;
            0.5 + 0.3 * ((6.0 * x + c as f64).sin() * (4.0 * y).cos())
        })
    }

    fn noisy(img: &Image, std: f64, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, std).unwrap();
        img.map(|v| v + n.sample(&mut rng))
    }

    #[test]
    fn identical_images() {
        let a = test_card(16, 16);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CEILING_DB);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn uniform_offset_is_20_db() {
        let a = Image::filled(8, 8, 3, 0.2);
        let b = Image::filled(8, 8, 3, 0.3);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn single_pixel_error() {
        let a = Image::zeros(10, 10, 1);
        let mut b = a.clone();
        b.set(3, 4, 0, 0.5);
        // MSE = 0.25 / 100
        let expected = 10.0 * (100.0f64 / 0.25).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 26.0206).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            psnr(&Image::zeros(4, 4, 1), &Image::zeros(4, 5, 1), 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            ssim(&Image::zeros(10, 10, 1), &Image::filled(10, 10, 1, 0.5)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn inverted_image_has_low_ssim() {
        let a = test_card(32, 32);
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b).unwrap() < 0.3);
    }

    #[test]
    fn noisy_copy_is_between_zero_and_one() {
        let a = test_card(32, 32);
        let s = ssim(&a, &noisy(&a, 0.1, 1)).unwrap();
        assert!(s > 0.0 && s < 1.0, "{s}");
    }

    #[test]
    fn ssim_symmetric() {
        let a = test_card(24, 20);
        let b = noisy(&a, 0.05, 2);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_with_noise() {
        let a = test_card(32, 32);
        let p: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&s| psnr(&a, &noisy(&a, s, 3), 1.0).unwrap())
            .collect();
        assert!(p[0] > p[1] && p[1] > p[2], "{p:?}");
    }
}
