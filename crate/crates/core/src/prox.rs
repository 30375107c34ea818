//! Proximal operators.
//!
//! The data-fidelity prox of `D(u) = ½‖A u − y‖²` with step `δ` is the
//! solution of `(I + δAᵀA) u = v + δAᵀy`. For circular deconvolution `AᵀA`
//! is diagonal in the Fourier basis and the solve is closed-form; every
//! operator kind can use conjugate gradients.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::operators::{ForwardOperator, GaussianKernel, OperatorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProxMethod {
    Fft,
    Cg,
    /// FFT for deconvolution, CG otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    pub method: ProxMethod,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            method: ProxMethod::Auto,
            cg_tol: 1e-6,
            cg_max_iters: 100,
        }
    }
}

impl ProxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) {
            return Err(Error::config("cg tolerance must be positive"));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::config("cg needs at least one iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Image,
    pub iterations: usize,
    /// `‖linop(u) − b‖ / ‖b‖`, recomputed from the returned solution.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive-definite `linop`.
///
/// Starts from `initial` (zeros when `None`) and stops once the relative
/// residual drops to `tol`. A non-converged run still returns its last
/// iterate, flagged in the outcome.
pub fn cg_solve(
    linop: impl Fn(&Image) -> Result<Image>,
    b: &Image,
    initial: Option<&Image>,
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    let b_norm = b.norm();
    let (h, w, c) = b.shape();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: Image::zeros(h, w, c),
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut u = match initial {
        Some(x0) => {
            x0.check_same_shape(b, "cg initial guess")?;
            x0.clone()
        }
        None => Image::zeros(h, w, c),
    };
    let mut r = b.sub(&linop(&u)?);
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let mut iterations = 0;
    while iterations < max_iters && rs.sqrt() > tol * b_norm {
        let ap = linop(&p)?;
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            // lost positive definiteness or hit an exact solution direction
            break;
        }
        let alpha = rs / curvature;
        u.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_next = r.dot(&r);
        let beta = rs_next / rs;
        rs = rs_next;
        for (pi, &ri) in p.data_mut().iter_mut().zip(r.data()) {
            *pi = ri + beta * *pi;
        }
        iterations += 1;
    }
    let relative_residual = b.sub(&linop(&u)?).norm() / b_norm;
    if !u.is_finite() {
        return Err(Error::Numeric(
            "conjugate gradients produced a non-finite iterate".into(),
        ));
    }
    Ok(CgOutcome {
        solution: u,
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
    })
}

/// Right-hand side and normal operator of the data-prox system.
fn normal_system(v: &Image, y: &Image, op: &ForwardOperator, delta: f64) -> Result<Image> {
    let mut rhs = v.clone();
    rhs.axpy(delta, &op.adjoint(y)?);
    Ok(rhs)
}

/// `(I + δAᵀA) u`
pub fn normal_apply(u: &Image, op: &ForwardOperator, delta: f64) -> Result<Image> {
    let mut out = u.clone();
    out.axpy(delta, &op.adjoint(&op.apply(u)?)?);
    Ok(out)
}

/// Relative optimality residual of a data-prox solution `u`.
pub fn prox_residual(u: &Image, v: &Image, y: &Image, op: &ForwardOperator, delta: f64) -> Result<f64> {
    let rhs = normal_system(v, y, op, delta)?;
    let lhs = normal_apply(u, op, delta)?;
    let n = rhs.norm();
    Ok(if n == 0.0 { lhs.norm() } else { lhs.sub(&rhs).norm() / n })
}

/// `argmin_u ½‖u − v‖² + δ·½‖A u − y‖²`.
pub fn prox_data(v: &Image, y: &Image, op: &ForwardOperator, delta: f64, cfg: &ProxConfig) -> Result<Image> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::config(format!("prox step must be finite and >= 0, got {delta}")));
    }
    cfg.validate()?;
    let expected = op.observation_shape(v.shape())?;
    if y.shape() != expected {
        return Err(Error::dim(format!(
            "observation shape {:?} does not match A applied to {:?} ({expected:?})",
            y.shape(),
            v.shape()
        )));
    }
    if delta == 0.0 {
        return Ok(v.clone());
    }
    let method = match (cfg.method, op.kind()) {
        (ProxMethod::Auto, OperatorKind::Deconv) => ProxMethod::Fft,
        (ProxMethod::Auto, _) => ProxMethod::Cg,
        (ProxMethod::Fft, kind) if kind != OperatorKind::Deconv => {
            return Err(Error::config(format!(
                "FFT prox only diagonalises deconvolution, not {kind:?}"
            )));
        }
        (m, _) => m,
    };
    match method {
        ProxMethod::Fft => prox_deconv_fft(v, y, op.kernel(), delta),
        _ => {
            let rhs = normal_system(v, y, op, delta)?;
            let outcome = cg_solve(
                |u| normal_apply(u, op, delta),
                &rhs,
                Some(v),
                cfg.cg_tol,
                cfg.cg_max_iters,
            )?;
            if !outcome.converged {
                log::warn!(
                    "data prox: CG stopped after {} iterations at relative residual {:.3e}",
                    outcome.iterations,
                    outcome.relative_residual
                );
            }
            Ok(outcome.solution)
        }
    }
}

/// In-place 2-D DFT of a row-major `h × w` plane.
struct Fft2 {
    h: usize,
    w: usize,
    rows: std::sync::Arc<dyn rustfft::Fft<f64>>,
    cols: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let (rows, cols) = if inverse {
            (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
        } else {
            (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
        };
        Self { h, w, rows, cols }
    }

    fn process(&self, data: &mut [Complex64]) {
        for row in data.chunks_mut(self.w) {
            self.rows.process(row);
        }
        let mut column = vec![Complex64::default(); self.h];
        for j in 0..self.w {
            for i in 0..self.h {
                column[i] = data[i * self.w + j];
            }
            self.cols.process(&mut column);
            for i in 0..self.h {
                data[i * self.w + j] = column[i];
            }
        }
    }
}

/// Transfer function of circular convolution with `kernel` on an `h × w` grid.
fn kernel_spectrum(kernel: &GaussianKernel, h: usize, w: usize) -> Vec<Complex64> {
    let r = kernel.radius() as isize;
    let mut psf = vec![Complex64::default(); h * w];
    for a in 0..kernel.size() {
        for b in 0..kernel.size() {
            let i = (a as isize - r).rem_euclid(h as isize) as usize;
            let j = (b as isize - r).rem_euclid(w as isize) as usize;
            psf[i * w + j].re += kernel.tap(a, b);
        }
    }
    Fft2::new(h, w, false).process(&mut psf);
    psf
}

/// Circular convolution through the FFT; agrees with
/// [`convolve`](crate::operators::convolve) to rounding.
pub fn convolve_fft(img: &Image, kernel: &GaussianKernel) -> Result<Image> {
    let (h, w, c) = img.shape();
    if kernel.size() > h.min(w) {
        return Err(Error::dim("kernel does not fit the image"));
    }
    let k_hat = kernel_spectrum(kernel, h, w);
    let forward = Fft2::new(h, w, false);
    let inverse = Fft2::new(h, w, true);
    let scale = 1.0 / (h * w) as f64;
    let mut out = Image::zeros(h, w, c);
    for ch in 0..c {
        let mut plane: Vec<Complex64> = img.channel(ch).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        forward.process(&mut plane);
        for (p, k) in plane.iter_mut().zip(&k_hat) {
            *p *= k;
        }
        inverse.process(&mut plane);
        let real: Vec<f64> = plane.iter().map(|z| z.re * scale).collect();
        out.set_channel(ch, &real);
    }
    Ok(out)
}

/// `û = (v̂ + δ·conj(k̂)·ŷ) / (1 + δ|k̂|²)`, channel by channel.
fn prox_deconv_fft(v: &Image, y: &Image, kernel: &GaussianKernel, delta: f64) -> Result<Image> {
    let (h, w, c) = v.shape();
    if kernel.size() > h.min(w) {
        return Err(Error::dim("kernel does not fit the image"));
    }
    let k_hat = kernel_spectrum(kernel, h, w);
    let forward = Fft2::new(h, w, false);
    let inverse = Fft2::new(h, w, true);
    let scale = 1.0 / (h * w) as f64;
    let mut out = Image::zeros(h, w, c);
    for ch in 0..c {
        let mut vf: Vec<Complex64> = v.channel(ch).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        let mut yf: Vec<Complex64> = y.channel(ch).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        forward.process(&mut vf);
        forward.process(&mut yf);
        for ((vv, yy), k) in vf.iter_mut().zip(&yf).zip(&k_hat) {
            *vv = (*vv + delta * k.conj() * yy) / (1.0 + delta * k.norm_sqr());
        }
        inverse.process(&mut vf);
        let real: Vec<f64> = vf.iter().map(|z| z.re * scale).collect();
        out.set_channel(ch, &real);
    }
    Ok(out)
}

/// Total-variation denoising, `argmin_u ½‖u − v‖² + weight·TV(u)` with
/// isotropic TV, by Chambolle's dual projection (Neumann boundary),
/// channel by channel.
pub fn tv_denoise(v: &Image, weight: f64, iters: usize) -> Result<Image> {
    if !(weight >= 0.0) {
        return Err(Error::config("TV weight must be >= 0"));
    }
    if iters == 0 {
        return Err(Error::config("TV needs at least one iteration"));
    }
    if weight == 0.0 {
        return Ok(v.clone());
    }
    const TAU: f64 = 0.25;
    let (h, w, c) = v.shape();
    let mut out = Image::zeros(h, w, c);
    for ch in 0..c {
        let f = v.channel(ch);
        let mut px = vec![0.0; h * w];
        let mut py = vec![0.0; h * w];
        let mut div = vec![0.0; h * w];
        for _ in 0..iters {
            divergence(&px, &py, h, w, &mut div);
            let t: Vec<f64> = div.iter().zip(&f).map(|(d, fv)| d - fv / weight).collect();
            for i in 0..h {
                for j in 0..w {
                    let k = i * w + j;
                    let gx = if j + 1 < w { t[k + 1] - t[k] } else { 0.0 };
                    let gy = if i + 1 < h { t[k + w] - t[k] } else { 0.0 };
                    let norm = (gx * gx + gy * gy).sqrt();
                    let denom = 1.0 + TAU * norm;
                    px[k] = (px[k] + TAU * gx) / denom;
                    py[k] = (py[k] + TAU * gy) / denom;
                }
            }
        }
        divergence(&px, &py, h, w, &mut div);
        let u: Vec<f64> = f.iter().zip(&div).map(|(fv, d)| fv - weight * d).collect();
        out.set_channel(ch, &u);
    }
    Ok(out)
}

/// Negative adjoint of the forward-difference gradient.
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let dx = match j {
                0 => px[k],
                _ if j + 1 == w => -px[k - 1],
                _ => px[k] - px[k - 1],
            };
            let dy = match i {
                0 => py[k],
                _ if i + 1 == h => -py[k - w],
                _ => py[k] - py[k - w],
            };
            out[k] = dx + dy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{convolve, BayerPattern};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    fn deconv(size: usize, std: f64) -> ForwardOperator {
        ForwardOperator::Deconv {
            kernel: GaussianKernel::new(size, std).unwrap(),
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let v = random_image(16, 16, 3, 1);
        let y = random_image(16, 16, 3, 2);
        let u = prox_data(&v, &y, &deconv(5, 1.0), 0.0, &ProxConfig::default()).unwrap();
        assert_eq!(u, v);
    }

    #[test]
    fn huge_step_with_identity_operator_returns_observation() {
        let v = random_image(16, 16, 3, 3);
        let y = random_image(16, 16, 3, 4);
        let op = ForwardOperator::Deconv {
            kernel: GaussianKernel::delta(3).unwrap(),
        };
        for method in [ProxMethod::Fft, ProxMethod::Cg] {
            let cfg = ProxConfig {
                method,
                ..Default::default()
            };
            let u = prox_data(&v, &y, &op, 1e8, &cfg).unwrap();
            assert!(u.max_abs_diff(&y) < 1e-6);
        }
    }

    #[test]
    fn fft_and_cg_agree_on_deconvolution() {
        let v = random_image(16, 16, 3, 5);
        let y = random_image(16, 16, 3, 6);
        let op = deconv(5, 1.5);
        let fft = prox_data(
            &v,
            &y,
            &op,
            2.0,
            &ProxConfig {
                method: ProxMethod::Fft,
                ..Default::default()
            },
        )
        .unwrap();
        let cg = prox_data(
            &v,
            &y,
            &op,
            2.0,
            &ProxConfig {
                method: ProxMethod::Cg,
                cg_tol: 1e-12,
                cg_max_iters: 500,
            },
        )
        .unwrap();
        assert!(fft.max_abs_diff(&cg) < 1e-6);
    }

    #[test]
    fn fft_rejected_for_sr_and_joint() {
        let cfg = ProxConfig {
            method: ProxMethod::Fft,
            ..Default::default()
        };
        let joint = ForwardOperator::Joint {
            kernel: GaussianKernel::new(5, 1.0).unwrap(),
            pattern: BayerPattern::Rggb,
        };
        let v = random_image(16, 16, 3, 7);
        assert!(matches!(prox_data(&v, &v, &joint, 1.0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn observation_shape_checked() {
        let v = random_image(16, 16, 3, 8);
        let y = random_image(8, 8, 3, 9);
        assert!(matches!(
            prox_data(&v, &y, &deconv(5, 1.0), 1.0, &ProxConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let x = random_image(12, 10, 2, 10);
        let k = GaussianKernel::new(7, 2.0).unwrap();
        let direct = convolve(&x, &k).unwrap();
        assert!(convolve_fft(&x, &k).unwrap().max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn cg_identity_one_iteration() {
        let b = random_image(4, 4, 1, 11);
        let out = cg_solve(|u| Ok(u.clone()), &b, None, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.solution.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn cg_diagonal_by_hand() {
        let diag = Image::from_vec(1, 2, 1, vec![1.0, 4.0]).unwrap();
        let b = Image::from_vec(1, 2, 1, vec![1.0, 4.0]).unwrap();
        let out = cg_solve(|u| Ok(u.mul(&diag)), &b, None, 1e-14, 10).unwrap();
        assert!(out.solution.max_abs_diff(&Image::filled(1, 2, 1, 1.0)) < 1e-12);
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let b = Image::zeros(3, 3, 1);
        let x0 = Image::filled(3, 3, 1, 5.0);
        let out = cg_solve(|u| Ok(u.clone()), &b, Some(&x0), 1e-6, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, b);
    }

    /// Gaussian elimination with partial pivoting, independent of CG.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                let (upper, lower) = a.split_at_mut(row);
                for (t, s) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *t -= f * s;
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    #[test]
    fn cg_matches_dense_solver_on_random_spd() {
        let n = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // SPD: MᵀM + I
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expected = dense_solve(a.clone(), b.clone());
        let linop = |u: &Image| {
            let d = u.data();
            let out = (0..n).map(|i| (0..n).map(|j| a[i][j] * d[j]).sum()).collect();
            Image::from_vec(1, n, 1, out)
        };
        let bi = Image::from_vec(1, n, 1, b).unwrap();
        let out = cg_solve(linop, &bi, None, 1e-12, 200).unwrap();
        for (x, e) in out.solution.data().iter().zip(&expected) {
            assert!((x - e).abs() < 1e-6);
        }
    }

    #[test]
    fn tv_zero_weight_and_constant() {
        let v = random_image(8, 8, 2, 13);
        assert_eq!(tv_denoise(&v, 0.0, 5).unwrap(), v);
        let flat = Image::filled(8, 8, 3, 0.4);
        assert!(tv_denoise(&flat, 0.7, 20).unwrap().max_abs_diff(&flat) < 1e-15);
    }

    #[test]
    fn tv_flattens_noisy_step_edge() {
        let clean = Image::from_fn(32, 32, 1, |_, j, _| if j < 16 { 0.2 } else { 0.8 });
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = Normal::new(0.0, 0.1).unwrap();
        let noisy = clean.map(|v| v + n.sample(&mut rng));
        let out = tv_denoise(&noisy, 0.1, 20).unwrap();
        let variance = |img: &Image| {
            let vals: Vec<f64> = (0..32)
                .flat_map(|i| (2..14).map(move |j| (i, j)))
                .map(|(i, j)| img.get(i, j, 0))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
        };
        assert!(variance(&out) < variance(&noisy));
    }

    #[test]
    fn tv_invalid_parameters() {
        let v = Image::zeros(4, 4, 1);
        assert!(tv_denoise(&v, -1.0, 5).is_err());
        assert!(tv_denoise(&v, 0.1, 0).is_err());
    }
}
