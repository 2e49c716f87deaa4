//! One-class detector: two encoders, Hadamard latent fusion, one decoder.
//!
//! The encoders see the reference and suspicious stacks separately (each
//! standardized and laid out as a one-channel square). Their latents are
//! fused element-wise and decoded to a single style vector, and the
//! reconstruction error against both inputs is the anomaly score. Training
//! uses real-real pairs only, so a swapped suspicious image reconstructs
//! poorly and scores high.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, DatasetManifest, PairLabel, PairRecord, Split};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureExtractorConfig, ImageArray, StyleFeatureStack};
use crate::layout::{square_side, to_square, FeatureNormalizer};
use crate::losses::reconstruction_loss;
use crate::nn::{self, Adam, Conv2d, Dense, ParamAlloc};
use crate::pipeline::{extract_records, extract_records_augmented, PairFeatures};
use crate::util::derive_seed;
use crate::verdict::Verdict;

pub const DEFAULT_K: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub seed: u64,
    /// Channel widths of the two encoder convolutions; the decoder mirrors them.
    pub conv_widths: [usize; 2],
    /// Length of the style vectors the model consumes.
    pub input_dim: usize,
    /// Augmented views added per training pair.
    pub augment_copies: usize,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 200,
            latent_dim: 64,
            seed: 0,
            conv_widths: [16, 32],
            input_dim: 0,
            augment_copies: 0,
        }
    }
}

impl AnomalyConfig {
    /// Shorter schedule with a larger step, sized for a single CPU core.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 3e-3,
            epochs: 60,
            ..Self::default()
        }
    }

    pub fn for_extractor(mut self, extractor: &FeatureExtractor) -> Self {
        self.input_dim = extractor.stack_len();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.latent_dim == 0 {
            return Err(Error::Config("batch_size, epochs and latent_dim must be at least 1".into()));
        }
        if self.conv_widths.contains(&0) {
            return Err(Error::Config("convolution widths must be positive".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    c1: Conv2d,
    c2: Conv2d,
    fc: Dense,
}

#[derive(Debug, Clone)]
struct Decoder {
    fc: Dense,
    c1: Conv2d,
    c2: Conv2d,
}

#[derive(Debug, Clone)]
struct DualNet {
    dim: usize,
    side: usize,
    /// Side of the decoder's coarsest map; the output plane is `4·q` wide.
    q: usize,
    widths: [usize; 2],
    e1: Encoder,
    e2: Encoder,
    dec: Decoder,
    n_params: usize,
}

struct EncoderTrace {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    /// Spatial side after the first convolution.
    s1: usize,
    z: Vec<f64>,
}

struct Trace {
    x1: Vec<f64>,
    x2: Vec<f64>,
    t1: EncoderTrace,
    t2: EncoderTrace,
    fused: Vec<f64>,
    d0: Vec<f64>,
    u0: Vec<f64>,
    d1: Vec<f64>,
    u1: Vec<f64>,
    xhat: Vec<f64>,
}

impl Encoder {
    fn new(alloc: &mut ParamAlloc, side: usize, widths: [usize; 2], latent: usize) -> Self {
        let c1 = Conv2d::new(alloc, 1, widths[0], 3, 2, 1);
        let (s1, _) = c1.out_dims(side, side);
        let c2 = Conv2d::new(alloc, widths[0], widths[1], 3, 2, 1);
        let (s2, _) = c2.out_dims(s1, s1);
        let fc = Dense::new(alloc, widths[1] * s2 * s2, latent);
        Self { c1, c2, fc }
    }

    fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng) {
        self.c1.init(params, rng, 6.0);
        self.c2.init(params, rng, 6.0);
        self.fc.init(params, rng, 3.0);
    }

    fn forward(&self, params: &[f64], x: &[f64], side: usize) -> EncoderTrace {
        let mut input = vec![0.0; side * side];
        to_square(x, &mut input);
        let (mut h1, s1, _) = self.c1.forward(params, &input, side, side);
        nn::elu(&mut h1);
        let (mut h2, _, _) = self.c2.forward(params, &h1, s1, s1);
        nn::elu(&mut h2);
        let mut z = self.fc.forward(params, &h2);
        nn::tanh(&mut z);
        EncoderTrace { input, h1, h2, s1, z }
    }

    fn backward(&self, params: &[f64], t: &EncoderTrace, side: usize, dz: &[f64], grads: &mut [f64]) {
        let mut g = dz.to_vec();
        nn::tanh_backward(&t.z, &mut g);
        let mut g2 = vec![0.0; t.h2.len()];
        self.fc.backward(params, &t.h2, &g, grads, Some(&mut g2));
        nn::elu_backward(&t.h2, &mut g2);
        let mut g1 = vec![0.0; t.h1.len()];
        self.c2.backward(params, &t.h1, t.s1, t.s1, &g2, grads, Some(&mut g1));
        nn::elu_backward(&t.h1, &mut g1);
        self.c1.backward(params, &t.input, side, side, &g1, grads, None);
    }
}

impl DualNet {
    fn new(config: &AnomalyConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.input_dim;
        let side = square_side(dim);
        let q = side.div_ceil(4);
        let w = config.conv_widths;
        let mut alloc = ParamAlloc::new();
        let e1 = Encoder::new(&mut alloc, side, w, config.latent_dim);
        let e2 = Encoder::new(&mut alloc, side, w, config.latent_dim);
        let dec = Decoder {
            fc: Dense::new(&mut alloc, config.latent_dim, w[1] * q * q),
            c1: Conv2d::new(&mut alloc, w[1], w[0], 3, 1, 1),
            c2: Conv2d::new(&mut alloc, w[0], 1, 3, 1, 1),
        };
        Ok(Self {
            dim,
            side,
            q,
            widths: w,
            e1,
            e2,
            dec,
            n_params: alloc.len(),
        })
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.n_params];
        self.e1.init(&mut params, &mut rng);
        self.e2.init(&mut params, &mut rng);
        self.dec.fc.init(&mut params, &mut rng, 6.0);
        self.dec.c1.init(&mut params, &mut rng, 6.0);
        self.dec.c2.init(&mut params, &mut rng, 1.0);
        params
    }

    /// Position of style value `j` in the decoder's `4q × 4q` output plane.
    fn out_index(&self, j: usize) -> usize {
        let p = 4 * self.q;
        (j / self.side) * p + j % self.side
    }

    fn decode(&self, params: &[f64], fused: Vec<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (q, w) = (self.q, self.widths);
        let mut d0 = self.dec.fc.forward(params, &fused);
        nn::elu(&mut d0);
        let u0 = nn::upsample2(&d0, w[1], q, q);
        let (mut d1, _, _) = self.dec.c1.forward(params, &u0, 2 * q, 2 * q);
        nn::elu(&mut d1);
        let u1 = nn::upsample2(&d1, w[0], 2 * q, 2 * q);
        let (out, _, _) = self.dec.c2.forward(params, &u1, 4 * q, 4 * q);
        let xhat = (0..self.dim).map(|j| out[self.out_index(j)]).collect();
        (fused, d0, u0, d1, u1, xhat)
    }

    fn forward(&self, params: &[f64], x1: Vec<f64>, x2: Vec<f64>) -> Trace {
        let t1 = self.e1.forward(params, &x1, self.side);
        let t2 = self.e2.forward(params, &x2, self.side);
        let fused = fuse(&t1.z, &t2.z);
        let (fused, d0, u0, d1, u1, xhat) = self.decode(params, fused);
        Trace { x1, x2, t1, t2, fused, d0, u0, d1, u1, xhat }
    }

    fn backward(&self, params: &[f64], t: &Trace, d_xhat: &[f64], grads: &mut [f64]) {
        let (q, w) = (self.q, self.widths);
        let p = 4 * q;
        let mut g_out = vec![0.0; p * p];
        for (j, g) in d_xhat.iter().enumerate() {
            g_out[self.out_index(j)] = *g;
        }
        let mut g_u1 = vec![0.0; t.u1.len()];
        self.dec.c2.backward(params, &t.u1, p, p, &g_out, grads, Some(&mut g_u1));
        let mut g_d1 = nn::upsample2_backward(&g_u1, w[0], 2 * q, 2 * q);
        nn::elu_backward(&t.d1, &mut g_d1);
        let mut g_u0 = vec![0.0; t.u0.len()];
        self.dec.c1.backward(params, &t.u0, 2 * q, 2 * q, &g_d1, grads, Some(&mut g_u0));
        let mut g_d0 = nn::upsample2_backward(&g_u0, w[1], q, q);
        nn::elu_backward(&t.d0, &mut g_d0);
        let mut g_fused = vec![0.0; t.fused.len()];
        self.dec.fc.backward(params, &t.fused, &g_d0, grads, Some(&mut g_fused));
        let dz1: Vec<f64> = g_fused.iter().zip(&t.t2.z).map(|(g, z)| g * z).collect();
        let dz2: Vec<f64> = g_fused.iter().zip(&t.t1.z).map(|(g, z)| g * z).collect();
        self.e1.backward(params, &t.t1, self.side, &dz1, grads);
        self.e2.backward(params, &t.t2, self.side, &dz2, grads);
    }
}

fn fuse(z1: &[f64], z2: &[f64]) -> Vec<f64> {
    z1.iter().zip(z2).map(|(a, b)| a * b).collect()
}

/// Hadamard product of two latents.
pub fn fuse_latents(z1: &[f64], z2: &[f64]) -> Result<Vec<f64>> {
    if z1.len() != z2.len() {
        return Err(Error::Validation(format!("latent lengths differ: {} vs {}", z1.len(), z2.len())));
    }
    Ok(fuse(z1, z2))
}

/// Threshold on the anomaly score: `μ + k·σ` over real-real validation
/// scores, with the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub mu: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub k: f64,
}

impl ThresholdCalibration {
    pub fn from_moments(mu: f64, sigma: f64, k: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() || !k.is_finite() {
            return Err(Error::Validation(format!("invalid calibration moments μ={mu}, σ={sigma}, k={k}")));
        }
        Ok(Self {
            mu,
            sigma,
            threshold: mu + k * sigma,
            k,
        })
    }

    pub fn from_losses(losses: &[f64], k: f64) -> Result<Self> {
        if losses.len() < 2 {
            return Err(Error::Validation(format!(
                "calibration needs at least 2 validation losses, got {}",
                losses.len()
            )));
        }
        let n = losses.len() as f64;
        let mu = losses.iter().sum::<f64>() / n;
        let var = losses.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
        Self::from_moments(mu, var.sqrt(), k)
    }

    /// Same statistics, different multiplier.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        Self::from_moments(self.mu, self.sigma, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DualEncoderModel {
    config: AnomalyConfig,
    net: DualNet,
    normalizer: FeatureNormalizer,
    params: Vec<f64>,
    pub history: Vec<AnomalyEpochRecord>,
    pub calibration: Option<ThresholdCalibration>,
    pub fe_config: Option<FeatureExtractorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyState {
    pub config: AnomalyConfig,
    pub normalizer: FeatureNormalizer,
    pub params: Vec<f64>,
    pub history: Vec<AnomalyEpochRecord>,
    pub calibration: Option<ThresholdCalibration>,
    pub fe_config: Option<FeatureExtractorConfig>,
}

pub fn init_dual_encoder(config: &AnomalyConfig) -> Result<DualEncoderModel> {
    let net = DualNet::new(config)?;
    let params = net.init(config.seed);
    Ok(DualEncoderModel {
        config: config.clone(),
        normalizer: FeatureNormalizer::unfitted(net.dim),
        net,
        params,
        history: Vec::new(),
        calibration: None,
        fe_config: None,
    })
}

impl DualEncoderModel {
    pub fn config(&self) -> &AnomalyConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.net.dim
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn to_state(&self) -> AnomalyState {
        AnomalyState {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            params: self.params.clone(),
            history: self.history.clone(),
            calibration: self.calibration,
            fe_config: self.fe_config.clone(),
        }
    }

    pub fn from_state(state: AnomalyState) -> Result<Self> {
        let net = DualNet::new(&state.config)?;
        if state.params.len() != net.n_params || state.normalizer.dim() != net.dim {
            return Err(Error::Validation("anomaly model state does not match its configuration".into()));
        }
        Ok(Self {
            config: state.config,
            net,
            normalizer: state.normalizer,
            params: state.params,
            history: state.history,
            calibration: state.calibration,
            fe_config: state.fe_config,
        })
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.net.dim {
            return Err(Error::Validation(format!(
                "style vector of length {} does not match model input of {}",
                x.len(),
                self.net.dim
            )));
        }
        Ok(())
    }

    fn trace(&self, x1: &[f64], x2: &[f64]) -> Trace {
        self.net.forward(&self.params, self.normalizer.apply(x1), self.normalizer.apply(x2))
    }

    /// Reconstruction from the fused latents, in standardized units.
    pub fn reconstruct(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x1)?;
        self.check_len(x2)?;
        Ok(self.trace(x1, x2).xhat)
    }

    /// Reconstruction loss of one pair and its gradient with respect to the
    /// parameters, through decoder, fusion and both encoders.
    pub fn loss_and_gradient(&self, x1: &[f64], x2: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(x1)?;
        self.check_len(x2)?;
        let t = self.trace(x1, x2);
        let loss = reconstruction_loss(&t.x1, &t.x2, &t.xhat)?;
        let mut grads = vec![0.0; self.params.len()];
        self.net.backward(&self.params, &t, &loss.gradients[2], &mut grads);
        Ok((loss.value, grads))
    }

    fn check_extractor(&self, extractor: &FeatureExtractor) -> Result<()> {
        match &self.fe_config {
            Some(cfg) if cfg != extractor.config() => Err(Error::Config(
                "feature extractor configuration differs from the one the anomaly model was trained with".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Latents of the reference (`E1`) and suspicious (`E2`) vectors.
pub fn encode_pair(model: &DualEncoderModel, x1: &[f64], x2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_len(x1)?;
    model.check_len(x2)?;
    let side = model.net.side;
    let z1 = model.net.e1.forward(&model.params, &model.normalizer.apply(x1), side).z;
    let z2 = model.net.e2.forward(&model.params, &model.normalizer.apply(x2), side).z;
    Ok((z1, z2))
}

fn score_trace(t: &Trace) -> Result<f64> {
    Ok(reconstruction_loss(&t.x1, &t.x2, &t.xhat)?.value)
}

/// Reconstruction loss of the pair against the decoded fused latent.
pub fn anomaly_score(model: &DualEncoderModel, reference: &StyleFeatureStack, suspicious: &StyleFeatureStack) -> Result<f64> {
    model.check_len(reference.stacked())?;
    model.check_len(suspicious.stacked())?;
    let s = score_trace(&model.trace(reference.stacked(), suspicious.stacked()))?;
    if !s.is_finite() {
        return Err(Error::Numeric("anomaly score is not finite".into()));
    }
    Ok(s)
}

/// Mean reconstruction loss over a batch and its parameter gradient.
fn batch_loss_and_grad(model: &DualEncoderModel, batch: &[&PairFeatures], grads: &mut [f64]) -> Result<f64> {
    grads.fill(0.0);
    let n = batch.len() as f64;
    let mut total = 0.0;
    for p in batch {
        let t = model.trace(p.reference.stacked(), p.suspicious.stacked());
        let loss = reconstruction_loss(&t.x1, &t.x2, &t.xhat)?;
        total += loss.value;
        let d: Vec<f64> = loss.gradients[2].iter().map(|g| g / n).collect();
        model.net.backward(&model.params, &t, &d, grads);
    }
    Ok(total / n)
}

fn real_pairs(data: &[PairFeatures]) -> Vec<&PairFeatures> {
    data.iter().filter(|p| p.label == PairLabel::RealReal).collect()
}

/// Trains on the real-real pairs of `train`; fake-real pairs are ignored.
/// `val` real-real pairs, when present, are scored after every epoch.
pub fn train_anomaly_on_features(
    train: &[PairFeatures],
    val: &[PairFeatures],
    config: &AnomalyConfig,
) -> Result<DualEncoderModel> {
    let train = real_pairs(train);
    let val = real_pairs(val);
    if train.is_empty() {
        return Err(Error::Validation("no real-real pairs to train the anomaly model on".into()));
    }
    let mut model = init_dual_encoder(config)?;
    for p in train.iter().chain(&val) {
        model.check_len(p.reference.stacked())?;
        model.check_len(p.suspicious.stacked())?;
    }
    model.normalizer =
        FeatureNormalizer::fit_pair_spread(train.iter().map(|p| (p.reference.stacked(), p.suspicious.stacked())))?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "anomaly-batches"));
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut grads = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PairFeatures> = chunk.iter().map(|&i| train[i]).collect();
            let loss = batch_loss_and_grad(&model, &batch, &mut grads)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut model.params, &grads);
            sum += loss * chunk.len() as f64;
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            let scores = val
                .iter()
                .map(|p| anomaly_score(&model, &p.reference, &p.suspicious))
                .collect::<Result<Vec<_>>>()?;
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        };
        model.history.push(AnomalyEpochRecord {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
        });
    }
    Ok(model)
}

/// Train/val records of a manifest, splitting 80/20 with `seed` when the
/// manifest carries no assignments.
fn train_val_records(manifest: &DatasetManifest, seed: u64) -> Result<(DatasetManifest, Vec<PairRecord>, Vec<PairRecord>)> {
    let manifest = if manifest.records.iter().all(|r| r.split.is_none()) {
        split_dataset(manifest, 0.8, seed)?
    } else {
        manifest.clone()
    };
    let train = manifest.split(Split::Train).into_iter().cloned().collect();
    let val = manifest.split(Split::Val).into_iter().cloned().collect();
    Ok((manifest, train, val))
}

pub fn train_anomaly(
    manifest: &DatasetManifest,
    fe_config: &FeatureExtractorConfig,
    config: &AnomalyConfig,
) -> Result<DualEncoderModel> {
    if !manifest.records.iter().any(|r| r.label == PairLabel::RealReal) {
        return Err(Error::Validation("manifest contains no real-real pairs".into()));
    }
    let extractor = FeatureExtractor::new(fe_config)?;
    let config = if config.input_dim == 0 {
        config.clone().for_extractor(&extractor)
    } else {
        config.clone()
    };
    let (manifest, train, val) = train_val_records(manifest, config.seed)?;
    let train: Vec<&PairRecord> = train.iter().filter(|r| r.label.is_real()).collect();
    let val: Vec<&PairRecord> = val.iter().filter(|r| r.label.is_real()).collect();
    if train.is_empty() {
        return Err(Error::Validation("training split contains no real-real pairs".into()));
    }
    let train = extract_records_augmented(&manifest, &train, &extractor, config.augment_copies, config.seed)?;
    let val = extract_records(&manifest, &val, &extractor)?;
    let mut model = train_anomaly_on_features(&train, &val, &config)?;
    model.fe_config = Some(fe_config.clone());
    Ok(model)
}

/// Calibrates on the real-real pairs of `val`.
pub fn calibrate_on_features(model: &DualEncoderModel, val: &[PairFeatures], k: f64) -> Result<ThresholdCalibration> {
    let scores = real_pairs(val)
        .iter()
        .map(|p| anomaly_score(model, &p.reference, &p.suspicious))
        .collect::<Result<Vec<_>>>()?;
    ThresholdCalibration::from_losses(&scores, k)
}

/// Calibrates on the real-real validation pairs of `manifest` (all real-real
/// pairs when the manifest has no split assignments).
pub fn calibrate_threshold(
    model: &DualEncoderModel,
    manifest: &DatasetManifest,
    fe_config: &FeatureExtractorConfig,
    k: f64,
) -> Result<ThresholdCalibration> {
    let extractor = FeatureExtractor::new(fe_config)?;
    model.check_extractor(&extractor)?;
    let records: Vec<&PairRecord> = manifest
        .split_or_all(Split::Val)
        .into_iter()
        .filter(|r| r.label.is_real())
        .collect();
    let val = extract_records(manifest, &records, &extractor)?;
    calibrate_on_features(model, &val, k)
}

pub fn detect_anomaly(
    model: &DualEncoderModel,
    reference: &ImageArray,
    suspicious: &ImageArray,
    extractor: &FeatureExtractor,
    calibration: Option<&ThresholdCalibration>,
) -> Result<Verdict> {
    let calibration =
        calibration.ok_or_else(|| Error::Config("anomaly detection requires a calibrated threshold".into()))?;
    model.check_extractor(extractor)?;
    let (r, s) = extractor.extract_pair_features(reference, suspicious)?;
    Ok(Verdict::from_anomaly_score(anomaly_score(model, &r, &s)?, calibration.threshold))
}
