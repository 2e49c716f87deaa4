//! Style-feature pair classifier.
//!
//! The two stacks of a pair are standardized, scaled by a learned per-feature
//! gain, and laid out as a two-channel square image (reference channel,
//! suspicious channel). Four stride-2 convolution blocks and a sigmoid head
//! produce the probability that the pair is real-real. Training minimizes
//! `BCE + α·SIL`, where the identity loss acts on the gain-scaled stacks, so
//! it shapes the learned feature weighting as well as the classifier.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureExtractorConfig, ImageArray, StyleFeatureStack};
use crate::layout::{square_side, to_square, FeatureNormalizer};
use crate::losses::{bce_loss, final_loss, stacked_identity_loss, PairBatch, PROB_EPS};
use crate::nn::{self, Adam, Conv2d, Dense, ParamAlloc};
use crate::pipeline::{extract_records, extract_records_augmented, PairFeatures};
use crate::util::derive_seed;
use crate::verdict::Verdict;

pub const DEFAULT_DECISION_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Weight of the stacked identity loss.
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub conv_widths: [usize; 4],
    /// Per-layer style vector lengths of the input stacks.
    pub layer_dims: Vec<usize>,
    /// Augmented views added per training pair.
    pub augment_copies: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            conv_widths: [32, 64, 128, 128],
            layer_dims: Vec::new(),
            augment_copies: 0,
        }
    }
}

impl ClassifierConfig {
    /// Full-scale schedule: Adam at 1e-4, batch 64, 200 epochs.
    pub fn paper_scale() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            ..Self::default()
        }
    }

    /// Sets `layer_dims` from an extractor's stack layout.
    pub fn for_extractor(mut self, extractor: &FeatureExtractor) -> Self {
        self.layer_dims = extractor.stack_layout().iter().map(|r| r.len()).collect();
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.conv_widths.contains(&0) {
            return Err(Error::Config("convolution widths must be positive".into()));
        }
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "input layout {:?} cannot feed the convolutional classifier",
                self.layer_dims
            )));
        }
        Ok(())
    }

    fn layer_offsets(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.layer_dims
            .iter()
            .map(|&d| {
                let r = start..start + d;
                start += d;
                r
            })
            .collect()
    }
}

/// Layer structure of the classifier; parameters live in a flat vector.
#[derive(Debug, Clone)]
struct PairNet {
    dim: usize,
    side: usize,
    gain_off: usize,
    convs: Vec<Conv2d>,
    head: Dense,
    n_params: usize,
}

/// Intermediate values of one forward pass.
struct Trace {
    xr: Vec<f64>,
    xs: Vec<f64>,
    ar: Vec<f64>,
    as_: Vec<f64>,
    /// `(input, height, width)` of each convolution.
    conv_inputs: Vec<(Vec<f64>, usize, usize)>,
    conv_outputs: Vec<Vec<f64>>,
    flat: Vec<f64>,
    prob: f64,
}

impl PairNet {
    fn new(config: &ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.input_dim();
        let side = square_side(dim);
        let mut alloc = ParamAlloc::new();
        let gain_off = alloc.take(dim);
        let mut convs = Vec::with_capacity(4);
        let mut in_c = 2;
        let mut s = side;
        for &w in &config.conv_widths {
            let conv = Conv2d::new(&mut alloc, in_c, w, 3, 2, 1);
            s = conv.out_dims(s, s).0;
            convs.push(conv);
            in_c = w;
        }
        let head = Dense::new(&mut alloc, in_c * s * s, 1);
        Ok(Self {
            dim,
            side,
            gain_off,
            convs,
            head,
            n_params: alloc.len(),
        })
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.n_params];
        params[self.gain_off..self.gain_off + self.dim].fill(1.0);
        for conv in &self.convs {
            conv.init(&mut params, &mut rng, 6.0);
        }
        self.head.init(&mut params, &mut rng, 1.0);
        params
    }

    fn gain<'p>(&self, params: &'p [f64]) -> &'p [f64] {
        &params[self.gain_off..self.gain_off + self.dim]
    }

    fn forward(&self, params: &[f64], xr: Vec<f64>, xs: Vec<f64>) -> Trace {
        let gain = self.gain(params);
        let ar: Vec<f64> = xr.iter().zip(gain).map(|(x, g)| x * g).collect();
        let as_: Vec<f64> = xs.iter().zip(gain).map(|(x, g)| x * g).collect();
        let plane = self.side * self.side;
        let mut input = vec![0.0; 2 * plane];
        to_square(&ar, &mut input[..plane]);
        to_square(&as_, &mut input[plane..]);

        let (mut h, mut w) = (self.side, self.side);
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_outputs = Vec::with_capacity(self.convs.len());
        let mut x = input;
        for conv in &self.convs {
            let (mut y, oh, ow) = conv.forward(params, &x, h, w);
            nn::elu(&mut y);
            conv_inputs.push((x, h, w));
            conv_outputs.push(y.clone());
            x = y;
            h = oh;
            w = ow;
        }
        let logit = self.head.forward(params, &x)[0];
        Trace {
            xr,
            xs,
            ar,
            as_,
            conv_inputs,
            conv_outputs,
            flat: x,
            prob: nn::sigmoid(logit),
        }
    }

    /// Accumulates parameter gradients given `dL/dlogit` and any extra
    /// gradient arriving directly at the gain-scaled stacks.
    fn backward(
        &self,
        params: &[f64],
        trace: &Trace,
        d_logit: f64,
        extra: Option<(&[f64], &[f64])>,
        grads: &mut [f64],
    ) {
        let mut grad = vec![0.0; trace.flat.len()];
        self.head.backward(params, &trace.flat, &[d_logit], grads, Some(&mut grad));
        for (i, conv) in self.convs.iter().enumerate().rev() {
            nn::elu_backward(&trace.conv_outputs[i], &mut grad);
            let (input, h, w) = &trace.conv_inputs[i];
            let mut grad_in = vec![0.0; input.len()];
            conv.backward(params, input, *h, *w, &grad, grads, Some(&mut grad_in));
            grad = grad_in;
        }
        let plane = self.side * self.side;
        let mut d_ar = grad[..self.dim].to_vec();
        let mut d_as = grad[plane..plane + self.dim].to_vec();
        if let Some((er, es)) = extra {
            d_ar.iter_mut().zip(er).for_each(|(g, e)| *g += e);
            d_as.iter_mut().zip(es).for_each(|(g, e)| *g += e);
        }
        for j in 0..self.dim {
            grads[self.gain_off + j] += d_ar[j] * trace.xr[j] + d_as[j] * trace.xs[j];
        }
    }
}

/// One epoch of training bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_bce: f64,
    pub train_sil: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    net: PairNet,
    normalizer: FeatureNormalizer,
    params: Vec<f64>,
    pub history: Vec<EpochRecord>,
    /// Extractor configuration the model was trained with.
    pub fe_config: Option<FeatureExtractorConfig>,
}

/// Serializable classifier state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    pub config: ClassifierConfig,
    pub normalizer: FeatureNormalizer,
    pub params: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub fe_config: Option<FeatureExtractorConfig>,
}

pub fn init_classifier(config: &ClassifierConfig) -> Result<ClassifierModel> {
    let net = PairNet::new(config)?;
    let params = net.init(config.seed);
    Ok(ClassifierModel {
        normalizer: FeatureNormalizer::unfitted(net.dim),
        config: config.clone(),
        net,
        params,
        history: Vec::new(),
        fe_config: None,
    })
}

impl ClassifierModel {
    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.net.dim
    }

    pub fn to_state(&self) -> ClassifierState {
        ClassifierState {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            params: self.params.clone(),
            history: self.history.clone(),
            fe_config: self.fe_config.clone(),
        }
    }

    pub fn from_state(state: ClassifierState) -> Result<Self> {
        let net = PairNet::new(&state.config)?;
        if state.params.len() != net.n_params || state.normalizer.dim() != net.dim {
            return Err(Error::Validation("classifier state does not match its configuration".into()));
        }
        Ok(Self {
            config: state.config,
            net,
            normalizer: state.normalizer,
            params: state.params,
            history: state.history,
            fe_config: state.fe_config,
        })
    }

    fn check_stack(&self, stack: &StyleFeatureStack) -> Result<()> {
        if stack.len() != self.net.dim || stack.layer_offsets() != self.config.layer_offsets().as_slice() {
            return Err(Error::Validation(format!(
                "stack of length {} does not match classifier input of {} with layers {:?}",
                stack.len(),
                self.net.dim,
                self.config.layer_dims
            )));
        }
        Ok(())
    }

    fn trace(&self, reference: &StyleFeatureStack, suspicious: &StyleFeatureStack) -> Trace {
        self.net.forward(
            &self.params,
            self.normalizer.apply(reference.stacked()),
            self.normalizer.apply(suspicious.stacked()),
        )
    }

    /// Raw forward pass on already-normalized vectors.
    pub fn forward_raw(&self, xr: &[f64], xs: &[f64]) -> f64 {
        self.net.forward(&self.params, xr.to_vec(), xs.to_vec()).prob
    }

    fn check_extractor(&self, extractor: &FeatureExtractor) -> Result<()> {
        match &self.fe_config {
            Some(cfg) if cfg != extractor.config() => Err(Error::Config(
                "feature extractor configuration differs from the one the classifier was trained with".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Probability that `(reference, suspicious)` is a real-real pair.
pub fn predict_pair(model: &ClassifierModel, reference: &StyleFeatureStack, suspicious: &StyleFeatureStack) -> Result<f64> {
    model.check_stack(reference)?;
    model.check_stack(suspicious)?;
    let p = model.trace(reference, suspicious).prob;
    if !p.is_finite() {
        return Err(Error::Numeric("classifier produced a non-finite probability".into()));
    }
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS))
}

/// End to end: extract both stacks, predict, threshold at `decision_cutoff`.
pub fn classify(
    model: &ClassifierModel,
    reference: &ImageArray,
    suspicious: &ImageArray,
    extractor: &FeatureExtractor,
    decision_cutoff: f64,
) -> Result<Verdict> {
    model.check_extractor(extractor)?;
    let (r, s) = extractor.extract_pair_features(reference, suspicious)?;
    Ok(Verdict::from_probability(predict_pair(model, &r, &s)?, decision_cutoff))
}

/// Gain-scaled stack, used as the identity-loss input.
fn scaled_stack(values: &[f64], offsets: &[Range<usize>]) -> StyleFeatureStack {
    StyleFeatureStack::from_parts(values.to_vec(), offsets.to_vec()).expect("offsets tile the input")
}

/// Mean loss and gradient of `BCE + α·SIL` over a batch, with respect to all
/// parameters. Returns `(final, bce, sil)`.
fn batch_loss_and_grad(
    model: &ClassifierModel,
    batch: &[&PairFeatures],
    grads: &mut [f64],
) -> Result<(f64, f64, f64)> {
    let offsets = model.config.layer_offsets();
    let traces: Vec<Trace> = batch.iter().map(|p| model.trace(&p.reference, &p.suspicious)).collect();
    let probs: Vec<f64> = traces.iter().map(|t| t.prob).collect();
    let labels: Vec<f64> = batch.iter().map(|p| p.label.as_f64()).collect();
    let bce = bce_loss(&probs, &labels)?;
    let ref_scaled: Vec<StyleFeatureStack> = traces.iter().map(|t| scaled_stack(&t.ar, &offsets)).collect();
    let sus_scaled: Vec<StyleFeatureStack> = traces.iter().map(|t| scaled_stack(&t.as_, &offsets)).collect();
    let sil = stacked_identity_loss(&PairBatch {
        ref_stacks: ref_scaled.iter().collect(),
        sus_stacks: sus_scaled.iter().collect(),
        labels,
    })?;
    let total = final_loss(&bce, &sil, model.config.alpha)?;
    let n = batch.len();
    grads.fill(0.0);
    for (i, trace) in traces.iter().enumerate() {
        let d_logit = total.gradients[0][i] * trace.prob * (1.0 - trace.prob);
        let extra = (total.gradients[1 + i].as_slice(), total.gradients[1 + n + i].as_slice());
        model.net.backward(&model.params, trace, d_logit, Some(extra), grads);
    }
    Ok((total.value, bce.value, sil.value))
}

fn evaluate_split(model: &ClassifierModel, data: &[PairFeatures]) -> Result<(f64, f64)> {
    let mut probs = Vec::with_capacity(data.len());
    let mut correct = 0;
    for p in data {
        let prob = predict_pair(model, &p.reference, &p.suspicious)?;
        let verdict = Verdict::from_probability(prob, DEFAULT_DECISION_CUTOFF);
        if verdict.label.is_face_swapped() != p.label.is_real() {
            correct += 1;
        }
        probs.push(prob);
    }
    let labels: Vec<f64> = data.iter().map(|p| p.label.as_f64()).collect();
    let loss = bce_loss(&probs, &labels)?.value;
    Ok((loss, correct as f64 / data.len() as f64))
}

/// Trains on pre-extracted features. When `val` is non-empty the parameters
/// with the best validation accuracy (earliest on ties) are kept.
pub fn train_classifier_on_features(
    train: &[PairFeatures],
    val: &[PairFeatures],
    config: &ClassifierConfig,
) -> Result<ClassifierModel> {
    if train.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let mut model = init_classifier(config)?;
    for p in train.iter().chain(val) {
        model.check_stack(&p.reference)?;
        model.check_stack(&p.suspicious)?;
    }
    // Within-identity spread from the real-real pairs; falls back to the
    // plain spread when the training set has none.
    let genuine: Vec<&PairFeatures> = train.iter().filter(|p| p.label.is_real()).collect();
    model.normalizer = if genuine.is_empty() {
        FeatureNormalizer::fit(train.iter().flat_map(|p| [p.reference.stacked(), p.suspicious.stacked()]))?
    } else {
        FeatureNormalizer::fit_pair_spread(genuine.iter().map(|p| (p.reference.stacked(), p.suspicious.stacked())))?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "classifier-batches"));
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut grads = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_bce, mut sum_sil) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PairFeatures> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, bce, sil) = batch_loss_and_grad(&model, &batch, &mut grads)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut model.params, &grads);
            let w = chunk.len() as f64;
            sum += loss * w;
            sum_bce += bce * w;
            sum_sil += sil * w;
        }
        let n = train.len() as f64;
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_split(&model, val)?;
            if best.as_ref().is_none_or(|(acc, _)| a > *acc) {
                best = Some((a, model.params.clone()));
            }
            (Some(l), Some(a))
        };
        model.history.push(EpochRecord {
            epoch,
            train_loss: sum / n,
            train_bce: sum_bce / n,
            train_sil: sum_sil / n,
            val_loss,
            val_accuracy,
        });
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(model)
}

/// Extracts features for the manifest's train/val splits and trains. A
/// manifest without split assignments is split 80/20 with the config seed.
pub fn train_classifier(
    manifest: &DatasetManifest,
    fe_config: &FeatureExtractorConfig,
    config: &ClassifierConfig,
) -> Result<ClassifierModel> {
    let extractor = FeatureExtractor::new(fe_config)?;
    let config = if config.layer_dims.is_empty() {
        config.clone().for_extractor(&extractor)
    } else {
        config.clone()
    };
    config.validate()?;
    let split;
    let manifest = if manifest.records.iter().all(|r| r.split.is_none()) {
        split = split_dataset(manifest, 0.8, config.seed)?;
        &split
    } else {
        manifest
    };
    let (train_recs, val_recs) = (manifest.split(Split::Train), manifest.split(Split::Val));
    if train_recs.is_empty() || val_recs.is_empty() {
        return Err(Error::Validation("manifest needs non-empty train and val splits".into()));
    }
    let train = extract_records_augmented(manifest, &train_recs, &extractor, config.augment_copies, config.seed)?;
    let val = extract_records(manifest, &val_recs, &extractor)?;
    let mut model = train_classifier_on_features(&train, &val, &config)?;
    model.fe_config = Some(fe_config.clone());
    Ok(model)
}
