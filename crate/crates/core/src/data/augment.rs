use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::preprocess::sample_bilinear;
use crate::features::ImageArray;

pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const MAX_JITTER: f64 = 0.10;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);

/// Transforms drawn for one seed; each fires with probability 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub flip: bool,
    pub rotation_deg: Option<f64>,
    /// `(brightness offset, contrast gain)`
    pub jitter: Option<(f64, f64)>,
    pub scale: Option<f64>,
}

impl AugmentPlan {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // parameters are always drawn so the stream layout does not depend on which transforms fire
        let flip = rng.random_bool(0.5);
        let rot_on = rng.random_bool(0.5);
        let rot = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        let jit_on = rng.random_bool(0.5);
        let brightness = rng.random_range(-MAX_JITTER..=MAX_JITTER);
        let contrast = 1.0 + rng.random_range(-MAX_JITTER..=MAX_JITTER);
        let scale_on = rng.random_bool(0.5);
        let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        Self {
            flip,
            rotation_deg: rot_on.then_some(rot),
            jitter: jit_on.then_some((brightness, contrast)),
            scale: scale_on.then_some(scale),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip && self.rotation_deg.is_none() && self.jitter.is_none() && self.scale.is_none()
    }

    pub fn apply(&self, image: &ImageArray) -> ImageArray {
        let mut out = image.clone();
        if self.flip {
            out = hflip(&out);
        }
        if self.rotation_deg.is_some() || self.scale.is_some() {
            out = warp(&out, self.rotation_deg.unwrap_or(0.0), self.scale.unwrap_or(1.0));
        }
        if let Some((brightness, contrast)) = self.jitter {
            let data = out.data().iter().map(|v| (v * contrast + brightness).clamp(-1.0, 1.0)).collect();
            out = ImageArray::new(data, out.height(), out.width(), out.channels()).expect("clamped");
        }
        out
    }
}

/// Random flip / rotation / colour jitter / scaling, deterministic in `seed`.
pub fn augment(image: &ImageArray, seed: u64) -> ImageArray {
    AugmentPlan::from_seed(seed).apply(image)
}

pub fn hflip(image: &ImageArray) -> ImageArray {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in (0..w).rev() {
            for ch in 0..c {
                data.push(image.get(y, x, ch));
            }
        }
    }
    ImageArray::new(data, h, w, c).expect("same shape")
}

/// Rotates by `deg` and zooms by `scale` about the image centre; the output
/// keeps the input size (centre crop when zooming in, edge padding when out).
fn warp(image: &ImageArray, deg: f64, scale: f64) -> ImageArray {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = deg.to_radians().sin_cos();
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = ((y as f64 - cy) / scale, (x as f64 - cx) / scale);
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            for ch in 0..c {
                data.push(sample_bilinear(image, sy, sx, ch).clamp(-1.0, 1.0));
            }
        }
    }
    ImageArray::new(data, h, w, c).expect("same shape")
}
