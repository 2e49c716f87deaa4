//! Multi-layer style feature extraction.
//!
//! A [`Backbone`] maps an aligned face image to activations at a set of
//! declared taps. Each selected tap is turned into a per-layer style vector
//! (the upper triangle of its normalized Gram matrix, or the raw activation)
//! and the vectors are concatenated into a [`StyleFeatureStack`].

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ParamAlloc};
use crate::util;

/// Side length of the default aligned face crop.
pub const IMAGE_SIZE: usize = 256;
pub const IMAGE_CHANNELS: usize = 3;

/// Preprocessed image, row-major `h × w × c`, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArray {
    data: Vec<f64>,
    height: usize,
    width: usize,
    channels: usize,
}

impl ImageArray {
    pub fn new(data: Vec<f64>, height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Validation(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
        })
    }

    /// Constant image, handy for probes.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; height * width * channels], height, width, channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Channel-major copy (`c × h × w`).
    pub fn to_chw(&self) -> Vec<f64> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleMode {
    Gram,
    RawEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorConfig {
    pub backbone_id: String,
    pub layer_ids: Vec<String>,
    pub style_mode: StyleMode,
    pub seed: u64,
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        Self {
            backbone_id: ToyConvBackbone::ID.to_string(),
            layer_ids: ["block1", "block2", "block3", "block4"]
                .into_iter()
                .map(String::from)
                .collect(),
            style_mode: StyleMode::Gram,
            seed: 7,
        }
    }
}

impl FeatureExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_ids.is_empty() {
            return Err(Error::Config("layer_ids must not be empty".into()));
        }
        for (i, id) in self.layer_ids.iter().enumerate() {
            if self.layer_ids[..i].contains(id) {
                return Err(Error::Config(format!("layer {id} listed twice")));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        util::fingerprint(self)
    }
}

/// One declared feature tap: `(layer_id, c_l, h_l, w_l)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTap {
    pub layer_id: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LayerTap {
    pub fn new(layer_id: &str, channels: usize, height: usize, width: usize) -> Self {
        Self {
            layer_id: layer_id.to_string(),
            channels,
            height,
            width,
        }
    }

    /// Length of this tap's style vector under `mode`.
    pub fn style_len(&self, mode: StyleMode) -> usize {
        match mode {
            StyleMode::Gram => self.channels * (self.channels + 1) / 2,
            StyleMode::RawEmbedding => self.channels * self.height * self.width,
        }
    }
}

/// A frozen feature extractor with declared taps.
pub trait Backbone: Send + Sync {
    fn id(&self) -> &str;

    /// Expected `(h, w, c)` of input images.
    fn input_shape(&self) -> (usize, usize, usize);

    fn taps(&self) -> &[LayerTap];

    /// Activations for every declared tap, in declaration order.
    fn forward(&self, image: &ImageArray) -> Vec<Vec<f64>>;
}

type BackboneFactory = fn(u64) -> Arc<dyn Backbone>;

/// Backbones keyed by id; each factory takes the extractor seed.
#[derive(Clone)]
pub struct BackboneRegistry {
    factories: BTreeMap<String, BackboneFactory>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut registry = Self {
            factories: BTreeMap::new(),
        };
        registry.register(ToyConvBackbone::ID, |seed| Arc::new(ToyConvBackbone::new(seed)));
        registry
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, id: &str, factory: BackboneFactory) {
        self.factories.insert(id.to_string(), factory);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, id: &str, seed: u64) -> Result<Arc<dyn Backbone>> {
        self.factories
            .get(id)
            .map(|f| f(seed))
            .ok_or_else(|| Error::Config(format!("unknown backbone_id {id:?}")))
    }
}

/// Desk-scale backbone: a 2×2 average-pool stem followed by four seeded
/// stride-2 convolution blocks with ReLU, plus a global-average-pooled
/// `embedding` tap on top of the last block.
pub struct ToyConvBackbone {
    blocks: Vec<Conv2d>,
    params: Vec<f64>,
    taps: Vec<LayerTap>,
}

impl ToyConvBackbone {
    pub const ID: &'static str = "toy-conv4";
    const WIDTHS: [usize; 4] = [4, 8, 8, 16];

    pub fn new(seed: u64) -> Self {
        let mut alloc = ParamAlloc::new();
        let mut in_c = IMAGE_CHANNELS;
        let mut blocks = Vec::new();
        for &out_c in &Self::WIDTHS {
            blocks.push(Conv2d::new(&mut alloc, in_c, out_c, 3, 2, 1));
            in_c = out_c;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; alloc.len()];
        for block in &blocks {
            block.init(&mut params, &mut rng, 6.0);
        }

        let mut side = IMAGE_SIZE / 2;
        let mut taps = Vec::new();
        for (i, block) in blocks.iter().enumerate() {
            side = block.out_dims(side, side).0;
            taps.push(LayerTap::new(&format!("block{}", i + 1), block.out_c, side, side));
        }
        taps.push(LayerTap::new("embedding", Self::WIDTHS[3], 1, 1));
        Self {
            blocks,
            params,
            taps,
        }
    }
}

impl Backbone for ToyConvBackbone {
    fn id(&self) -> &str {
        Self::ID
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS)
    }

    fn taps(&self) -> &[LayerTap] {
        &self.taps
    }

    fn forward(&self, image: &ImageArray) -> Vec<Vec<f64>> {
        let chw = image.to_chw();
        let (h, w, c) = (image.height(), image.width(), image.channels());
        let (mut ph, mut pw) = (h / 2, w / 2);
        let mut x = vec![0.0; c * ph * pw];
        for ch in 0..c {
            for y in 0..ph {
                for xx in 0..pw {
                    let at = |dy: usize, dx: usize| chw[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                    x[(ch * ph + y) * pw + xx] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                }
            }
        }
        let mut outs = Vec::with_capacity(self.taps.len());
        for block in &self.blocks {
            let (mut y, oh, ow) = block.forward(&self.params, &x, ph, pw);
            nn::relu(&mut y);
            outs.push(y.clone());
            x = y;
            ph = oh;
            pw = ow;
        }
        let hw = (ph * pw) as f64;
        let pooled = x.chunks(ph * pw).map(|plane| plane.iter().sum::<f64>() / hw).collect();
        outs.push(pooled);
        outs
    }
}

/// Activation of one selected layer, `c × h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    pub layer_id: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LayerActivation {
    pub fn new(layer_id: &str, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Validation(format!(
                "activation {layer_id} has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            layer_id: layer_id.to_string(),
            channels,
            height,
            width,
            data,
        })
    }
}

/// Activations for the configured layers, in `layer_ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureSet {
    pub layers: Vec<LayerActivation>,
}

/// Normalized Gram matrix `F·Fᵀ / (h·w)` of a `c × h × w` activation,
/// returned row-major as `c × c`.
pub fn gram_matrix(activation: &LayerActivation) -> Result<Vec<f64>> {
    let c = activation.channels;
    let hw = activation.height * activation.width;
    if hw == 0 {
        return Err(Error::Validation(format!(
            "layer {} has empty spatial extent",
            activation.layer_id
        )));
    }
    if activation.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("layer {} activation is not finite", activation.layer_id)));
    }
    let rows: Vec<&[f64]> = activation.data.chunks(hw).collect();
    let mut gram = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let v = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum::<f64>() / hw as f64;
            gram[i * c + j] = v;
            gram[j * c + i] = v;
        }
    }
    Ok(gram)
}

/// Row-wise upper triangle (diagonal included) of a square matrix.
pub fn upper_triangle(matrix: &[f64], dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        out.extend_from_slice(&matrix[i * dim + i..(i + 1) * dim]);
    }
    out
}

/// Per-layer style vectors and their ordered concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleFeatureStack {
    stacked: Vec<f64>,
    layer_offsets: Vec<Range<usize>>,
}

impl StyleFeatureStack {
    pub fn from_layers(per_layer: Vec<Vec<f64>>) -> Self {
        let mut stacked = Vec::with_capacity(per_layer.iter().map(Vec::len).sum());
        let mut layer_offsets = Vec::with_capacity(per_layer.len());
        for v in per_layer {
            let start = stacked.len();
            stacked.extend(v);
            layer_offsets.push(start..stacked.len());
        }
        Self {
            stacked,
            layer_offsets,
        }
    }

    /// Rebuilds a stack from a flat vector and explicit layer ranges.
    pub fn from_parts(stacked: Vec<f64>, layer_offsets: Vec<Range<usize>>) -> Result<Self> {
        let mut expected = 0;
        for r in &layer_offsets {
            if r.start != expected || r.end < r.start {
                return Err(Error::Validation("layer offsets must tile the stacked vector".into()));
            }
            expected = r.end;
        }
        if expected != stacked.len() {
            return Err(Error::Validation(format!(
                "layer offsets cover {expected} values but stack has {}",
                stacked.len()
            )));
        }
        Ok(Self {
            stacked,
            layer_offsets,
        })
    }

    pub fn stacked(&self) -> &[f64] {
        &self.stacked
    }

    pub fn layer_offsets(&self) -> &[Range<usize>] {
        &self.layer_offsets
    }

    pub fn num_layers(&self) -> usize {
        self.layer_offsets.len()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.stacked[self.layer_offsets[l].clone()]
    }

    pub fn len(&self) -> usize {
        self.stacked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacked.is_empty()
    }

    pub fn unstack(&self) -> Vec<Vec<f64>> {
        self.layer_offsets.iter().map(|r| self.stacked[r.clone()].to_vec()).collect()
    }
}

/// Turns layer activations into the stacked style representation.
pub fn stack_style_features(features: &LayerFeatureSet, config: &FeatureExtractorConfig) -> Result<StyleFeatureStack> {
    let ids: Vec<&str> = features.layers.iter().map(|l| l.layer_id.as_str()).collect();
    if ids != config.layer_ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Config(format!(
            "feature layers {ids:?} do not match configured layers {:?}",
            config.layer_ids
        )));
    }
    let per_layer = features
        .layers
        .iter()
        .map(|layer| match config.style_mode {
            StyleMode::Gram => gram_matrix(layer).map(|g| upper_triangle(&g, layer.channels)),
            StyleMode::RawEmbedding => Ok(layer.data.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StyleFeatureStack::from_layers(per_layer))
}

/// A resolved backbone plus the layer selection of a config.
#[derive(Clone)]
pub struct FeatureExtractor {
    config: FeatureExtractorConfig,
    backbone: Arc<dyn Backbone>,
    tap_indices: Vec<usize>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("config", &self.config).finish()
    }
}

impl FeatureExtractor {
    pub fn new(config: &FeatureExtractorConfig) -> Result<Self> {
        Self::with_registry(config, &BackboneRegistry::default())
    }

    pub fn with_registry(config: &FeatureExtractorConfig, registry: &BackboneRegistry) -> Result<Self> {
        config.validate()?;
        let backbone = registry.build(&config.backbone_id, config.seed)?;
        let tap_indices = config
            .layer_ids
            .iter()
            .map(|id| {
                backbone.taps().iter().position(|t| &t.layer_id == id).ok_or_else(|| {
                    Error::Config(format!("backbone {} has no layer {id:?}", config.backbone_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            backbone,
            tap_indices,
        })
    }

    pub fn config(&self) -> &FeatureExtractorConfig {
        &self.config
    }

    /// Declared taps for the selected layers, in order.
    pub fn selected_taps(&self) -> Vec<LayerTap> {
        self.tap_indices.iter().map(|&i| self.backbone.taps()[i].clone()).collect()
    }

    /// Layer ranges of the stacks this extractor produces.
    pub fn stack_layout(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.selected_taps()
            .iter()
            .map(|t| {
                let r = start..start + t.style_len(self.config.style_mode);
                start = r.end;
                r
            })
            .collect()
    }

    pub fn stack_len(&self) -> usize {
        self.stack_layout().last().map_or(0, |r| r.end)
    }

    pub fn extract_layer_features(&self, image: &ImageArray) -> Result<LayerFeatureSet> {
        let (h, w, c) = self.backbone.input_shape();
        if (image.height(), image.width(), image.channels()) != (h, w, c) {
            return Err(Error::Validation(format!(
                "backbone {} expects {h}x{w}x{c} images, got {}x{}x{}",
                self.config.backbone_id,
                image.height(),
                image.width(),
                image.channels()
            )));
        }
        let mut all = self.backbone.forward(image);
        let taps = self.backbone.taps();
        let layers = self
            .tap_indices
            .iter()
            .map(|&i| {
                let tap = &taps[i];
                let data = std::mem::take(&mut all[i]);
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("layer {} produced non-finite activations", tap.layer_id)));
                }
                LayerActivation::new(&tap.layer_id, tap.channels, tap.height, tap.width, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerFeatureSet { layers })
    }

    pub fn extract_stack(&self, image: &ImageArray) -> Result<StyleFeatureStack> {
        stack_style_features(&self.extract_layer_features(image)?, &self.config)
    }

    /// Extracts `(reference, suspicious)` stacks with the same configuration.
    pub fn extract_pair_features(
        &self,
        reference: &ImageArray,
        suspicious: &ImageArray,
    ) -> Result<(StyleFeatureStack, StyleFeatureStack)> {
        Ok((self.extract_stack(reference)?, self.extract_stack(suspicious)?))
    }
}

pub fn extract_layer_features(image: &ImageArray, config: &FeatureExtractorConfig) -> Result<LayerFeatureSet> {
    FeatureExtractor::new(config)?.extract_layer_features(image)
}

pub fn extract_pair_features(
    reference: &ImageArray,
    suspicious: &ImageArray,
    config: &FeatureExtractorConfig,
) -> Result<(StyleFeatureStack, StyleFeatureStack)> {
    FeatureExtractor::new(config)?.extract_pair_features(reference, suspicious)
}
