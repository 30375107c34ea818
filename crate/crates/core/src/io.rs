//! PNG / PPM loading and saving.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;

/// Loads an 8- or 16-bit PNG/PPM/PGM into `[0, 1]`. Grayscale files give a
/// 1-channel image, everything else 3 channels (alpha is dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| format_error(path, e))?;
    Ok(from_dynamic(decoded))
}

fn from_dynamic(img: DynamicImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let buf = img.into_luma16();
        let data = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Image::from_vec(h, w, 1, data).expect("decoded image shape")
    } else {
        let buf = img.into_rgb16();
        let data = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Image::from_vec(h, w, 3, data).expect("decoded image shape")
    }
}

/// Saves as 8-bit, format chosen by extension (`.png`, `.ppm`, `.pgm`).
/// Values are clamped to `[0, 1]` and rounded.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    save_with_depth(img, path.as_ref(), false)
}

/// Saves as a 16-bit PNG.
pub fn save_image_16(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    save_with_depth(img, path.as_ref(), true)
}

fn save_with_depth(img: &Image, path: &Path, sixteen: bool) -> Result<()> {
    let (h, w, c) = img.shape();
    let (w32, h32) = (w as u32, h as u32);
    let quant8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let quant16 = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let dynamic = match (c, sixteen) {
        (1, false) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, img.data().iter().map(|&v| quant8(v)).collect())
                .expect("buffer size"),
        ),
        (3, false) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, img.data().iter().map(|&v| quant8(v)).collect())
                .expect("buffer size"),
        ),
        (1, true) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, img.data().iter().map(|&v| quant16(v)).collect())
                .expect("buffer size"),
        ),
        (3, true) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, img.data().iter().map(|&v| quant16(v)).collect())
                .expect("buffer size"),
        ),
        _ => return Err(Error::dim(format!("cannot save a {c}-channel image"))),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    dynamic.save(path).map_err(|e| format_error(path, e))
}

/// Lanczos resize to `width × height`.
pub fn resize(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::dim("resize target must be non-empty"));
    }
    let (h, w, c) = img.shape();
    let to_f32 = |d: &[f64]| d.iter().map(|&v| v as f32).collect::<Vec<f32>>();
    let dynamic = match c {
        1 => DynamicImage::ImageLuma16(
            ImageBuffer::from_raw(
                w as u32,
                h as u32,
                img.data()
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                    .collect(),
            )
            .expect("buffer size"),
        ),
        3 => DynamicImage::ImageRgb32F(
            ImageBuffer::from_raw(w as u32, h as u32, to_f32(img.data())).expect("buffer size"),
        ),
        _ => return Err(Error::dim(format!("cannot resize a {c}-channel image"))),
    };
    let out = dynamic.resize_exact(width as u32, height as u32, image::imageops::FilterType::Lanczos3);
    let data: Vec<f64> = match c {
        1 => out
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        _ => out
            .into_rgb32f()
            .into_raw()
            .into_iter()
            .map(|v| (v as f64).clamp(0.0, 1.0))
            .collect(),
    };
    Image::from_vec(height, width, c, data)
}

fn format_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}
