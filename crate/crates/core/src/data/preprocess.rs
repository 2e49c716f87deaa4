use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::features::{ImageArray, IMAGE_CHANNELS, IMAGE_SIZE};

/// Hook for face detection and alignment. Inputs are expected to be
/// aligned face crops already; a real detector plugs in here.
pub trait FaceAligner {
    fn align(&self, image: RgbImage) -> Result<RgbImage>;
}

/// Accepts crops as they are.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreAligned;

impl FaceAligner for PreAligned {
    fn align(&self, image: RgbImage) -> Result<RgbImage> {
        Ok(image)
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Input(format!("cannot decode image: {e}")))
}

/// Decode, resize to 256×256 (bilinear) and map `p ↦ p/127.5 − 1`.
pub fn preprocess_image(raw: &[u8]) -> Result<ImageArray> {
    preprocess_with(&PreAligned, raw)
}

pub fn preprocess_with(aligner: &dyn FaceAligner, raw: &[u8]) -> Result<ImageArray> {
    let rgb = aligner.align(decode_image(raw)?)?;
    Ok(preprocess_rgb(&rgb))
}

pub fn preprocess_rgb(rgb: &RgbImage) -> ImageArray {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let src: Vec<f64> = rgb.as_raw().iter().map(|&p| p as f64).collect();
    let resized = if (h, w) == (IMAGE_SIZE, IMAGE_SIZE) {
        src
    } else {
        resize_bilinear(&src, h, w, IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE)
    };
    let data = resized.into_iter().map(normalize_pixel).collect();
    ImageArray::new(data, IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS).expect("normalized pixels lie in [-1, 1]")
}

pub fn normalize_pixel(p: f64) -> f64 {
    (p / 127.5 - 1.0).clamp(-1.0, 1.0)
}

pub fn load_image(path: &Path) -> Result<ImageArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    preprocess_image(&bytes).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Quantizes a preprocessed image back to 8-bit RGB.
pub fn to_rgb(image: &ImageArray) -> RgbImage {
    let bytes = image
        .data()
        .iter()
        .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes).expect("buffer matches dimensions")
}

pub fn encode_png(rgb: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Input(format!("cannot encode png: {e}")))?;
    Ok(out.into_inner())
}

/// Bilinear resize of an `h × w × c` buffer using half-pixel centres with
/// edge clamping, so corner output pixels reproduce corner inputs exactly
/// when upsampling.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, c: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_h * out_w * c];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[(oy * out_w + ox) * c + ch] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

/// Samples `image` at fractional coordinates with edge clamping.
pub(crate) fn sample_bilinear(image: &ImageArray, y: f64, x: f64, ch: usize) -> f64 {
    let (h, w) = (image.height(), image.width());
    let fy = y.clamp(0.0, (h - 1) as f64);
    let fx = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let top = image.get(y0, x0, ch) * (1.0 - tx) + image.get(y0, x1, ch) * tx;
    let bottom = image.get(y1, x0, ch) * (1.0 - tx) + image.get(y1, x1, ch) * tx;
    top * (1.0 - ty) + bottom * ty
}
