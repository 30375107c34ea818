//! Linear degradation operators and their adjoints.
//!
//! All convolutions are circular (periodic boundary), which keeps every
//! adjoint exact and lets the deconvolution prox diagonalise under the FFT.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::Image;

/// Square, odd-sized, unit-sum convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    std: f64,
    taps: Vec<f64>,
}

impl GaussianKernel {
    /// Samples a centred isotropic Gaussian at integer offsets and normalises
    /// the taps to sum to one.
    pub fn new(size: usize, std: f64) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size must be odd, got {size}")));
        }
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::config(format!("kernel std must be positive, got {std}")));
        }
        let r = (size / 2) as f64;
        let mut taps: Vec<f64> = (0..size * size)
            .map(|k| {
                let dy = (k / size) as f64 - r;
                let dx = (k % size) as f64 - r;
                (-(dx * dx + dy * dy) / (2.0 * std * std)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        Ok(Self { size, std, taps })
    }

    /// Single unit tap in the centre of a `size × size` support.
    pub fn delta(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size must be odd, got {size}")));
        }
        let mut taps = vec![0.0; size * size];
        taps[size * size / 2] = 1.0;
        Ok(Self { size, std: 0.0, taps })
    }

    /// Arbitrary taps; used for non-symmetric test kernels.
    pub fn from_taps(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) || taps.len() != size * size {
            return Err(Error::config("kernel taps must fill an odd square support"));
        }
        Ok(Self {
            size,
            std: f64::NAN,
            taps,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    /// The kernel rotated by 180°; convolving with it is the adjoint.
    pub fn rotated(&self) -> Self {
        let mut taps = self.taps.clone();
        taps.reverse();
        Self {
            size: self.size,
            std: self.std,
            taps,
        }
    }
}

impl fmt::Display for GaussianKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kernel {0}x{0} (std {1})", self.size, self.std)?;
        for row in self.taps.chunks(self.size) {
            let cells: Vec<String> = row.iter().map(|t| format!("{t:.5}")).collect();
            writeln!(f, "  {}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Channelwise circular convolution `k ⊗ img`.
pub fn convolve(img: &Image, kernel: &GaussianKernel) -> Result<Image> {
    let (h, w, c) = img.shape();
    if kernel.size() > h.min(w) {
        return Err(Error::dim(format!(
            "{0}x{0} kernel does not fit a {h}x{w} image",
            kernel.size()
        )));
    }
    let r = kernel.radius() as isize;
    let (hi, wi) = (h as isize, w as isize);
    let src = img.data();
    let mut out = Image::zeros(h, w, c);
    let dst = out.data_mut();
    for a in 0..kernel.size() {
        for b in 0..kernel.size() {
            let t = kernel.tap(a, b);
            if t == 0.0 {
                continue;
            }
            let (da, db) = (a as isize - r, b as isize - r);
            for i in 0..h {
                let si = (i as isize - da).rem_euclid(hi) as usize;
                for j in 0..w {
                    let sj = (j as isize - db).rem_euclid(wi) as usize;
                    let s = (si * w + sj) * c;
                    let d = (i * w + j) * c;
                    for ch in 0..c {
                        dst[d + ch] += t * src[s + ch];
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_scale(s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::config("scale must be positive"));
    }
    Ok(())
}

/// Keeps every `s`-th pixel in both directions, starting at (0, 0).
pub fn downsample(img: &Image, s: usize) -> Result<Image> {
    check_scale(s)?;
    let (h, w, c) = img.shape();
    if h % s != 0 || w % s != 0 {
        return Err(Error::dim(format!("{h}x{w} image is not divisible by scale {s}")));
    }
    Ok(Image::from_fn(h / s, w / s, c, |i, j, ch| img.get(i * s, j * s, ch)))
}

/// Adjoint of [`downsample`]: places each sample on an `s`-times larger
/// grid and fills the rest with zeros.
pub fn upsample_zero(img: &Image, s: usize) -> Result<Image> {
    check_scale(s)?;
    let (h, w, c) = img.shape();
    let mut out = Image::zeros(h * s, w * s, c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out.set(i * s, j * s, ch, img.get(i, j, ch));
            }
        }
    }
    Ok(out)
}

/// 2×2 colour filter array layout, named by the colours of the top-left
/// tile in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BayerPattern {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    /// Channel index (0 = R, 1 = G, 2 = B) sampled at pixel `(i, j)`.
    pub fn channel_at(self, i: usize, j: usize) -> usize {
        let tile = match self {
            BayerPattern::Rggb => [[0, 1], [1, 2]],
            BayerPattern::Bggr => [[2, 1], [1, 0]],
            BayerPattern::Grbg => [[1, 0], [2, 1]],
            BayerPattern::Gbrg => [[1, 2], [0, 1]],
        };
        tile[i % 2][j % 2]
    }

    /// Binary `h × w × 3` mask with exactly one active channel per pixel.
    pub fn mask(self, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |i, j, c| if self.channel_at(i, j) == c { 1.0 } else { 0.0 })
    }

    /// `M ⊙ img`; self-adjoint.
    pub fn apply(self, img: &Image) -> Result<Image> {
        let (h, w, c) = img.shape();
        if c != 3 {
            return Err(Error::dim(format!("mosaic needs 3 channels, got {c}")));
        }
        Ok(Image::from_fn(h, w, 3, |i, j, ch| {
            if self.channel_at(i, j) == ch {
                img.get(i, j, ch)
            } else {
                0.0
            }
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Deconv,
    Sr,
    Joint,
}

/// The measurement operator `A` of `y = A(x) + noise`.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOperator {
    /// `k ⊗ x`
    Deconv { kernel: GaussianKernel },
    /// `(k ⊗ x)↓s`
    SuperRes { kernel: GaussianKernel, scale: usize },
    /// `k ⊗ (M ⊙ x)`
    Joint {
        kernel: GaussianKernel,
        pattern: BayerPattern,
    },
}

impl ForwardOperator {
    pub fn kind(&self) -> OperatorKind {
        match self {
            ForwardOperator::Deconv { .. } => OperatorKind::Deconv,
            ForwardOperator::SuperRes { .. } => OperatorKind::Sr,
            ForwardOperator::Joint { .. } => OperatorKind::Joint,
        }
    }

    pub fn kernel(&self) -> &GaussianKernel {
        match self {
            ForwardOperator::Deconv { kernel }
            | ForwardOperator::SuperRes { kernel, .. }
            | ForwardOperator::Joint { kernel, .. } => kernel,
        }
    }

    /// Observation shape for a latent image of shape `(h, w, c)`.
    pub fn observation_shape(&self, (h, w, c): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match self {
            ForwardOperator::Deconv { .. } => Ok((h, w, c)),
            ForwardOperator::SuperRes { scale, .. } => {
                if *scale == 0 || h % scale != 0 || w % scale != 0 {
                    Err(Error::dim(format!("{h}x{w} image is not divisible by scale {scale}")))
                } else {
                    Ok((h / scale, w / scale, c))
                }
            }
            ForwardOperator::Joint { .. } => {
                if c == 3 {
                    Ok((h, w, c))
                } else {
                    Err(Error::dim(format!("mosaic needs 3 channels, got {c}")))
                }
            }
        }
    }

    /// Latent shape reconstructed from an observation of shape `(h, w, c)`.
    pub fn latent_shape(&self, (h, w, c): (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            ForwardOperator::SuperRes { scale, .. } => (h * scale, w * scale, c),
            _ => (h, w, c),
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.observation_shape(x.shape())?;
        match self {
            ForwardOperator::Deconv { kernel } => convolve(x, kernel),
            ForwardOperator::SuperRes { kernel, scale } => downsample(&convolve(x, kernel)?, *scale),
            ForwardOperator::Joint { kernel, pattern } => convolve(&pattern.apply(x)?, kernel),
        }
    }

    pub fn adjoint(&self, r: &Image) -> Result<Image> {
        let rotated = self.kernel().rotated();
        match self {
            ForwardOperator::Deconv { .. } => convolve(r, &rotated),
            ForwardOperator::SuperRes { scale, .. } => convolve(&upsample_zero(r, *scale)?, &rotated),
            ForwardOperator::Joint { pattern, .. } => pattern.apply(&convolve(r, &rotated)?),
        }
    }

    /// `A(𝟙)`: the per-sample gain the operator applies to a constant image.
    pub fn gain(&self, latent: (usize, usize, usize)) -> Result<Image> {
        self.apply(&Image::filled(latent.0, latent.1, latent.2, 1.0))
    }

    /// `y ⊘ A(𝟙)`, clamped to `[0, 1]`: the observation rescaled so a
    /// constant scene reads back at its own intensity. Samples the operator
    /// never sees (zero gain) map to 0.
    pub fn normalize_observation(&self, y: &Image) -> Result<Image> {
        let gain = self.gain(self.latent_shape(y.shape()))?;
        y.check_same_shape(&gain, "normalize_observation")?;
        Ok(y.zip_map(&gain, |v, g| if g > 1e-6 { (v / g).clamp(0.0, 1.0) } else { 0.0 }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    /// Textbook O(N·k²) circular convolution, written independently of
    /// [`convolve`]'s tap-major loop order.
    fn brute_force_convolve(x: &Image, k: &GaussianKernel) -> Image {
        let (h, w, c) = x.shape();
        let r = k.radius() as isize;
        Image::from_fn(h, w, c, |i, j, ch| {
            let mut acc = 0.0;
            for m in -r..=r {
                for n in -r..=r {
                    let si = (i as isize - m).rem_euclid(h as isize) as usize;
                    let sj = (j as isize - n).rem_euclid(w as isize) as usize;
                    acc += k.tap((m + r) as usize, (n + r) as usize) * x.get(si, sj, ch);
                }
            }
            acc
        })
    }

    #[test]
    fn kernel_invariants() {
        for (size, std) in [(5, 3.0), (15, 5.0), (3, 0.5)] {
            let k = GaussianKernel::new(size, std).unwrap();
            let total: f64 = k.taps().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert_eq!(k.rotated(), k);
        }
        assert!(GaussianKernel::new(4, 1.0).is_err());
        assert!(GaussianKernel::new(5, 0.0).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = random_image(9, 7, 3, 1);
        let out = convolve(&x, &GaussianKernel::delta(5).unwrap()).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn constant_image_is_preserved() {
        let x = Image::filled(20, 20, 2, 0.37);
        let out = convolve(&x, &GaussianKernel::new(15, 5.0).unwrap()).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn matches_brute_force() {
        let x = random_image(8, 8, 3, 2);
        let taps: Vec<f64> = (0..25).map(|k| ((k * 7919) % 13) as f64 / 13.0).collect();
        for k in [
            GaussianKernel::new(5, 1.2).unwrap(),
            GaussianKernel::from_taps(5, taps).unwrap(),
        ] {
            let fast = convolve(&x, &k).unwrap();
            assert!(fast.max_abs_diff(&brute_force_convolve(&x, &k)) < 1e-10);
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let x = Image::zeros(8, 8, 1);
        let k = GaussianKernel::new(9, 1.0).unwrap();
        assert!(matches!(convolve(&x, &k), Err(Error::Dimension(_))));
    }

    #[test]
    fn resampling_pair() {
        let x = random_image(8, 8, 2, 3);
        assert_eq!(downsample(&x, 1).unwrap(), x);
        assert_eq!(upsample_zero(&x, 1).unwrap(), x);
        let v = random_image(4, 3, 2, 4);
        assert_eq!(downsample(&upsample_zero(&v, 3).unwrap(), 3).unwrap(), v);
        assert!(matches!(
            downsample(&Image::zeros(9, 8, 1), 2),
            Err(Error::Dimension(_))
        ));

        let r = random_image(4, 4, 2, 5);
        let lhs = downsample(&x, 2).unwrap().dot(&r);
        let rhs = x.dot(&upsample_zero(&r, 2).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn bayer_tiles() {
        let m = BayerPattern::Rggb.mask(6, 8);
        for i in 0..6 {
            for j in 0..8 {
                let s: f64 = (0..3).map(|c| m.get(i, j, c)).sum();
                assert_eq!(s, 1.0);
            }
        }
        for ti in (0..6).step_by(2) {
            for tj in (0..8).step_by(2) {
                let mut counts = [0; 3];
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    counts[BayerPattern::Rggb.channel_at(ti + di, tj + dj)] += 1;
                }
                assert_eq!(counts, [1, 2, 1]);
            }
        }
        assert_eq!(BayerPattern::Rggb.channel_at(0, 0), 0);
        assert_eq!(BayerPattern::Rggb.channel_at(1, 1), 2);
    }

    #[test]
    fn joint_with_delta_is_pure_mosaic() {
        let x = random_image(8, 8, 3, 6);
        let op = ForwardOperator::Joint {
            kernel: GaussianKernel::delta(3).unwrap(),
            pattern: BayerPattern::Rggb,
        };
        let expected = x.mul(&BayerPattern::Rggb.mask(8, 8));
        assert_eq!(op.apply(&x).unwrap(), expected);
    }

    #[test]
    fn sr_shapes() {
        let op = ForwardOperator::SuperRes {
            kernel: GaussianKernel::new(5, 3.0).unwrap(),
            scale: 2,
        };
        assert_eq!(op.observation_shape((384, 512, 3)).unwrap(), (192, 256, 3));
        let y = op.apply(&Image::zeros(32, 16, 3)).unwrap();
        assert_eq!(y.shape(), (16, 8, 3));
        assert_eq!(op.adjoint(&y).unwrap().shape(), (32, 16, 3));
    }

    #[test]
    fn adjoint_identity_all_kinds() {
        let ops = [
            ForwardOperator::Deconv {
                kernel: GaussianKernel::new(15, 5.0).unwrap(),
            },
            ForwardOperator::SuperRes {
                kernel: GaussianKernel::new(5, 3.0).unwrap(),
                scale: 2,
            },
            ForwardOperator::Joint {
                kernel: GaussianKernel::new(15, 5.0).unwrap(),
                pattern: BayerPattern::Rggb,
            },
        ];
        for (n, op) in ops.iter().enumerate() {
            let x = random_image(16, 16, 3, 10 + n as u64);
            let ys = op.observation_shape(x.shape()).unwrap();
            let r = random_image(ys.0, ys.1, ys.2, 20 + n as u64);
            let lhs = op.apply(&x).unwrap().dot(&r);
            let rhs = x.dot(&op.adjoint(&r).unwrap());
            assert!((lhs - rhs).abs() < 1e-8, "{:?}: {lhs} vs {rhs}", op.kind());
        }
    }

    #[test]
    fn asymmetric_kernel_adjoint() {
        let taps: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let op = ForwardOperator::Deconv {
            kernel: GaussianKernel::from_taps(3, taps).unwrap(),
        };
        let x = random_image(7, 5, 1, 30);
        let r = random_image(7, 5, 1, 31);
        let lhs = op.apply(&x).unwrap().dot(&r);
        let rhs = x.dot(&op.adjoint(&r).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn normalized_joint_observation_of_constant_is_constant() {
        let op = ForwardOperator::Joint {
            kernel: GaussianKernel::new(5, 3.0).unwrap(),
            pattern: BayerPattern::Rggb,
        };
        let y = op.apply(&Image::filled(10, 10, 3, 0.6)).unwrap();
        let n = op.normalize_observation(&y).unwrap();
        assert!(n.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }
}
