//! Procedural identity/style oracle.
//!
//! Each synthetic identity is a style signature (palette, skin texture,
//! facial geometry) drawn from `(seed, identity_id)`. Every render varies the
//! content (pose, lighting, background, expression, sensor noise) while the
//! signature stays fixed. A swapped render places identity A's inner face
//! into identity B's frame: outside the inner face, colours, texture and
//! outline drift towards B in proportion to the artifact level, and the inner
//! skin texture is smoothed. At artifact level 0 the swap is pixel-identical
//! to a genuine render of A with the same content.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use super::manifest::{save_manifest, DatasetManifest, PairLabel, PairRecord, GENUINE_TECHNIQUE};
use super::preprocess::encode_png;
use crate::error::{Error, Result};
use crate::features::IMAGE_SIZE;
use crate::util::derive_seed;

pub const DEFAULT_ARTIFACT_LEVEL: f64 = 0.75;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

type Color = [f64; 3];

/// Identity-bearing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSignature {
    pub skin: Color,
    pub hair: Color,
    pub eyes: Color,
    pub lips: Color,
    /// Two skin texture components: `(frequency, orientation, amplitude)`.
    pub texture: [(f64, f64, f64); 2],
    /// Face width / height.
    pub aspect: f64,
    pub eye_spacing: f64,
    pub eye_size: f64,
    pub mouth_width: f64,
    /// Fraction of the face (from the top) covered by hair.
    pub hair_line: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticIdentity {
    pub identity_id: u64,
    pub style_signature: StyleSignature,
}

fn color<R: Rng>(rng: &mut R, lo: Color, hi: Color) -> Color {
    [
        rng.random_range(lo[0]..hi[0]),
        rng.random_range(lo[1]..hi[1]),
        rng.random_range(lo[2]..hi[2]),
    ]
}

impl SyntheticIdentity {
    pub fn new(seed: u64, identity_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("identity-{identity_id}")));
        let skin = color(&mut rng, [0.30, 0.20, 0.12], [0.95, 0.80, 0.70]);
        let hair = color(&mut rng, [0.03, 0.03, 0.03], [0.90, 0.80, 0.70]);
        let eyes = color(&mut rng, [0.05, 0.05, 0.05], [0.60, 0.70, 0.80]);
        let lips = color(&mut rng, [0.40, 0.10, 0.10], [0.90, 0.50, 0.50]);
        let mut texture = [(0.0, 0.0, 0.0); 2];
        for t in &mut texture {
            *t = (
                rng.random_range(0.03..0.12),
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.04..0.12),
            );
        }
        Self {
            identity_id,
            style_signature: StyleSignature {
                skin,
                hair,
                eyes,
                lips,
                texture,
                aspect: rng.random_range(0.78..0.95),
                eye_spacing: rng.random_range(0.28..0.42),
                eye_size: rng.random_range(0.07..0.11),
                mouth_width: rng.random_range(0.25..0.45),
                hair_line: rng.random_range(0.22..0.42),
            },
        }
    }
}

/// Non-identity scene parameters of a single render.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContent {
    pub offset: (f64, f64),
    pub scale: f64,
    pub rotation_deg: f64,
    pub background: [Color; 2],
    pub brightness: f64,
    pub light_tilt: f64,
    pub mouth_open: f64,
    pub eye_open: f64,
    pub noise_seed: u64,
}

/// Low-saturation grey with a slight tint.
fn muted<R: Rng>(rng: &mut R) -> Color {
    let level = rng.random_range(0.42..0.58);
    color(rng, [level - 0.03; 3], [level + 0.03; 3])
}

impl SceneContent {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            offset: (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            scale: rng.random_range(0.985..1.015),
            rotation_deg: rng.random_range(-1.5..1.5),
            background: [muted(rng), muted(rng)],
            brightness: rng.random_range(0.96..1.04),
            light_tilt: rng.random_range(-0.08..0.08),
            mouth_open: rng.random_range(0.2..0.6),
            eye_open: rng.random_range(0.6..1.0),
            noise_seed: rng.random(),
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn lerp_color(a: Color, b: Color, t: f64) -> Color {
    [lerp(a[0], b[0], t), lerp(a[1], b[1], t), lerp(a[2], b[2], t)]
}

fn blend_signature(a: &StyleSignature, b: &StyleSignature, t: f64) -> StyleSignature {
    let mut texture = a.texture;
    for (ta, tb) in texture.iter_mut().zip(&b.texture) {
        *ta = (lerp(ta.0, tb.0, t), lerp(ta.1, tb.1, t), lerp(ta.2, tb.2, t));
    }
    StyleSignature {
        skin: lerp_color(a.skin, b.skin, t),
        hair: lerp_color(a.hair, b.hair, t),
        eyes: lerp_color(a.eyes, b.eyes, t),
        lips: lerp_color(a.lips, b.lips, t),
        texture,
        aspect: lerp(a.aspect, b.aspect, t),
        eye_spacing: lerp(a.eye_spacing, b.eye_spacing, t),
        eye_size: lerp(a.eye_size, b.eye_size, t),
        mouth_width: lerp(a.mouth_width, b.mouth_width, t),
        hair_line: lerp(a.hair_line, b.hair_line, t),
    }
}

/// Radius (in face coordinates) of the swapped inner-face region.
const INNER_FACE: f64 = 0.6;
/// Half-width of the blending seam around the inner face.
const SEAM_WIDTH: f64 = 0.04;
const NOISE_SIGMA: f64 = 0.012;
const SEAM_STRENGTH: f64 = 0.3;

fn inside(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> bool {
    let (du, dv) = ((u - cu) / ru, (v - cv) / rv);
    du * du + dv * dv <= 1.0
}

fn skin_texture(sig: &StyleSignature, px: f64, py: f64) -> f64 {
    sig.texture
        .iter()
        .map(|&(freq, theta, amp)| {
            let (s, c) = theta.sin_cos();
            amp * (std::f64::consts::TAU * freq * (c * px + s * py)).sin()
        })
        .sum()
}

/// Renders a face whose inner region uses `inner` and whose frame (hair,
/// outline, outer skin ring) uses `outer`; `smoothing` damps the inner
/// skin texture and `seam` darkens a thin blending boundary between the two.
fn render_scene(inner: &StyleSignature, outer: &StyleSignature, smoothing: f64, seam: f64, content: &SceneContent) -> RgbImage {
    let size = IMAGE_SIZE as f64;
    let half_h = 0.5 * size * content.scale;
    let half_w = half_h * outer.aspect;
    let (cx, cy) = (size / 2.0 + content.offset.0, size * 0.53 + content.offset.1);
    let (sin, cos) = content.rotation_deg.to_radians().sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(content.noise_seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");

    RgbImage::from_fn(IMAGE_SIZE as u32, IMAGE_SIZE as u32, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // face frame, rotated with the head
        let fx = cos * dx + sin * dy;
        let fy = -sin * dx + cos * dy;
        let (u, v) = (fx / half_w, fy / half_h);
        let r = (u * u + v * v).sqrt();
        let hair_v = -1.0 + 2.0 * outer.hair_line;

        let base = if r <= 1.0 && v > hair_v {
            let sig = if r < INNER_FACE { inner } else { outer };
            let damp = if r < INNER_FACE { 1.0 - smoothing } else { 1.0 };
            let eye_v = -0.12;
            let eye_rv = inner.eye_size * content.eye_open;
            let eye = |side: f64| inside(u, v, side * inner.eye_spacing, eye_v, inner.eye_size * 1.4, eye_rv);
            let mouth = inside(u, v, 0.0, 0.45, inner.mouth_width / 2.0, 0.03 + 0.07 * content.mouth_open);
            if r < INNER_FACE && (eye(-1.0) || eye(1.0)) {
                inner.eyes
            } else if r < INNER_FACE && mouth {
                inner.lips
            } else {
                let mut t = 1.0 + damp * skin_texture(sig, fx, fy);
                if (r - INNER_FACE).abs() < SEAM_WIDTH {
                    t *= 1.0 - seam;
                }
                [sig.skin[0] * t, sig.skin[1] * t, sig.skin[2] * t]
            }
        } else if r <= 1.08 && v <= hair_v.max(-0.2) {
            let strand = 1.0 + 0.08 * (fx * 0.9).sin();
            [outer.hair[0] * strand, outer.hair[1] * strand, outer.hair[2] * strand]
        } else {
            let t = x as f64 / (size - 1.0);
            lerp_color(content.background[0], content.background[1], t)
        };

        let shade = content.brightness * (1.0 + content.light_tilt * (dx / size) * 2.0);
        let mut px = [0u8; 3];
        for ch in 0..3 {
            let value = base[ch] * shade + noise.sample(&mut rng);
            px[ch] = (value.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Rgb(px)
    })
}

/// Genuine render of `identity` under `content`.
pub fn render_identity(identity: &SyntheticIdentity, content: &SceneContent) -> RgbImage {
    let sig = &identity.style_signature;
    render_scene(sig, sig, 0.0, 0.0, content)
}

/// Face-swap render: `source`'s face grafted into `target`'s frame.
pub fn render_swap(source: &SyntheticIdentity, target: &SyntheticIdentity, content: &SceneContent, artifact: f64) -> RgbImage {
    let a = artifact.clamp(0.0, 1.0);
    let src = &source.style_signature;
    let outer = blend_signature(src, &target.style_signature, a);
    render_scene(src, &outer, 0.5 * a, SEAM_STRENGTH * a, content)
}

/// Generation parameters for a synthetic pair dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_identities: u64,
    pub n_pairs_per_class: usize,
    pub artifact_level: f64,
}

impl SyntheticConfig {
    pub fn new(seed: u64, n_identities: u64, n_pairs_per_class: usize) -> Self {
        Self {
            seed,
            n_identities,
            n_pairs_per_class,
            artifact_level: DEFAULT_ARTIFACT_LEVEL,
        }
    }

    pub fn with_artifact(mut self, level: f64) -> Self {
        self.artifact_level = level;
        self
    }

    pub fn technique(&self) -> String {
        technique_tag(self.artifact_level)
    }

    fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::Config(format!("need at least 2 identities, got {}", self.n_identities)));
        }
        if !(0.0..=1.0).contains(&self.artifact_level) {
            return Err(Error::Config(format!("artifact level {} outside [0, 1]", self.artifact_level)));
        }
        Ok(())
    }
}

pub fn technique_tag(artifact_level: f64) -> String {
    format!("synthetic-swap-a{artifact_level:.2}")
}

/// One generated pair before it is written to disk.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub pair_id: String,
    pub label: PairLabel,
    pub reference_identity: u64,
    /// Identity whose frame the suspicious image uses (equal to the reference
    /// identity for genuine pairs).
    pub frame_identity: u64,
    pub reference: RgbImage,
    pub suspicious: RgbImage,
}

/// Deterministically synthesizes pair `index` of the given class.
pub fn synthesize_pair(config: &SyntheticConfig, label: PairLabel, index: usize) -> Result<SyntheticPair> {
    config.validate()?;
    let pair_id = match label {
        PairLabel::RealReal => format!("rr-{index:05}"),
        PairLabel::FakeReal => format!("fr-{index:05}"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &pair_id));
    let a = rng.random_range(0..config.n_identities);
    let b = (a + rng.random_range(1..config.n_identities)) % config.n_identities;
    let ref_content = SceneContent::sample(&mut rng);
    let sus_content = SceneContent::sample(&mut rng);
    let ida = SyntheticIdentity::new(config.seed, a);
    let reference = render_identity(&ida, &ref_content);
    let (suspicious, frame_identity) = match label {
        PairLabel::RealReal => (render_identity(&ida, &sus_content), a),
        PairLabel::FakeReal => {
            let idb = SyntheticIdentity::new(config.seed, b);
            (render_swap(&ida, &idb, &sus_content, config.artifact_level), b)
        }
    };
    Ok(SyntheticPair {
        pair_id,
        label,
        reference_identity: a,
        frame_identity,
        reference,
        suspicious,
    })
}

/// Writes `<out_dir>/<pair_id>/{real,suspicious}.png` for every pair and
/// `<out_dir>/manifest.jsonl`.
pub fn generate_dataset(config: &SyntheticConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(2 * config.n_pairs_per_class);
    for label in [PairLabel::RealReal, PairLabel::FakeReal] {
        for i in 0..config.n_pairs_per_class {
            let pair = synthesize_pair(config, label, i)?;
            let dir = out_dir.join(&pair.pair_id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (name, img) in [("real.png", &pair.reference), ("suspicious.png", &pair.suspicious)] {
                let path = dir.join(name);
                fs::write(&path, encode_png(img)?).map_err(|e| Error::io(&path, e))?;
            }
            let mut extra = BTreeMap::new();
            extra.insert("reference_identity".to_string(), json!(pair.reference_identity));
            extra.insert("frame_identity".to_string(), json!(pair.frame_identity));
            extra.insert("artifact_level".to_string(), json!(config.artifact_level));
            records.push(PairRecord {
                pair_id: pair.pair_id.clone(),
                real_path: format!("{}/real.png", pair.pair_id),
                suspicious_path: format!("{}/suspicious.png", pair.pair_id),
                label,
                technique: if label.is_real() {
                    GENUINE_TECHNIQUE.to_string()
                } else {
                    config.technique()
                },
                scenario: BTreeMap::new(),
                split: None,
                extra,
            });
        }
    }
    let manifest = DatasetManifest::new(records, out_dir);
    save_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Default-artifact dataset of `n_pairs_per_class` real-real and fake-real pairs.
pub fn generate_synthetic_dataset(
    seed: u64,
    n_identities: u64,
    n_pairs_per_class: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    generate_dataset(&SyntheticConfig::new(seed, n_identities, n_pairs_per_class), out_dir)
}
