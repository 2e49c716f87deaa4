//! Detection metrics and the in-dataset / cross-dataset protocols.
//!
//! The positive class is *face-swapped*. Ranking metrics use
//! [`Verdict::suspicion`], so the classifier contributes `1 − p(real)` and the
//! anomaly detector its reconstruction score.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::anomaly::{anomaly_score, DualEncoderModel, ThresholdCalibration};
use crate::classifier::{predict_pair, ClassifierModel};
use crate::data::{DatasetManifest, PairLabel, PairRecord, Split, GENUINE_TECHNIQUE};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::pipeline::{extract_records, PairFeatures};
use crate::verdict::{Method, Verdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Tallies verdicts against ground truth (fake-real pairs are positives).
pub fn confusion_counts(verdicts: &[Verdict], truth: &[PairLabel]) -> Result<ConfusionCounts> {
    if verdicts.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} verdicts for {} labels",
            verdicts.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (v, t) in verdicts.iter().zip(truth) {
        match (v.label.is_face_swapped(), t.is_real()) {
            (true, false) => c.tp += 1,
            (true, true) => c.fp += 1,
            (false, true) => c.tn += 1,
            (false, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Threshold metrics; a ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
    }
}

/// Area under the ROC curve by the trapezoid rule over distinct score
/// thresholds. Tied scores move along a diagonal, which is exactly the
/// half-credit Mann–Whitney convention. Higher score = more suspicious.
pub fn auc(scores: &[f64], truth: &[PairLabel]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Validation(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    let n_pos = truth.iter().filter(|t| !t.is_real()).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation("AUC needs both real-real and fake-real pairs".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]].is_real() {
                fp += 1;
            } else {
                tp += 1;
            }
            i += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Test pairs whose technique was seen in training.
    InDataset,
    /// Pairs whose technique was absent from training.
    CrossDataset,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::InDataset => "in-dataset",
            Protocol::CrossDataset => "cross-dataset",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub protocol: Protocol,
    pub dataset_id: String,
    pub n_pairs: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub confusion: ConfusionCounts,
    /// Probability cutoff (classifier) or score threshold (anomaly).
    pub decision_threshold: f64,
}

/// A trained detector together with its decision rule.
#[derive(Debug, Clone, Copy)]
pub enum Detector<'a> {
    Classifier { model: &'a ClassifierModel, cutoff: f64 },
    Anomaly { model: &'a DualEncoderModel, calibration: &'a ThresholdCalibration },
}

impl Detector<'_> {
    pub fn method(&self) -> Method {
        match self {
            Detector::Classifier { .. } => Method::Classifier,
            Detector::Anomaly { .. } => Method::Anomaly,
        }
    }

    pub fn decision_threshold(&self) -> f64 {
        match self {
            Detector::Classifier { cutoff, .. } => *cutoff,
            Detector::Anomaly { calibration, .. } => calibration.threshold,
        }
    }

    pub fn verdict(&self, pair: &PairFeatures) -> Result<Verdict> {
        match self {
            Detector::Classifier { model, cutoff } => Ok(Verdict::from_probability(
                predict_pair(model, &pair.reference, &pair.suspicious)?,
                *cutoff,
            )),
            Detector::Anomaly { model, calibration } => Ok(Verdict::from_anomaly_score(
                anomaly_score(model, &pair.reference, &pair.suspicious)?,
                calibration.threshold,
            )),
        }
    }
}

/// Scores already-extracted pairs with one detector.
pub fn evaluate_pairs(
    detector: &Detector<'_>,
    pairs: &[PairFeatures],
    protocol: Protocol,
    dataset_id: &str,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Validation(format!("protocol {protocol} selected no pairs")));
    }
    let verdicts = pairs.iter().map(|p| detector.verdict(p)).collect::<Result<Vec<_>>>()?;
    let truth: Vec<PairLabel> = pairs.iter().map(|p| p.label).collect();
    let confusion = confusion_counts(&verdicts, &truth)?;
    let metrics = compute_metrics(&confusion);
    let suspicion: Vec<f64> = verdicts.iter().map(Verdict::suspicion).collect();
    let both_classes = truth.iter().any(|t| t.is_real()) && truth.iter().any(|t| !t.is_real());
    Ok(MetricsReport {
        method: detector.method(),
        protocol,
        dataset_id: dataset_id.to_string(),
        n_pairs: pairs.len(),
        accuracy: metrics.accuracy,
        precision: metrics.precision,
        recall: metrics.recall,
        f1: metrics.f1,
        auc: if both_classes { Some(auc(&suspicion, &truth)?) } else { None },
        confusion,
        decision_threshold: detector.decision_threshold(),
    })
}

/// Records a protocol evaluates: the test split (every record when the
/// manifest has no split assignments), keeping genuine pairs plus fake pairs
/// whose technique is (in-dataset) or is not (cross-dataset) among
/// `training_techniques`.
pub fn select_records<'m>(
    manifest: &'m DatasetManifest,
    protocol: Protocol,
    training_techniques: &BTreeSet<String>,
) -> Vec<&'m PairRecord> {
    manifest
        .split_or_all(Split::Test)
        .into_iter()
        .filter(|r| {
            r.label.is_real()
                || r.technique == GENUINE_TECHNIQUE
                || match protocol {
                    Protocol::InDataset => training_techniques.contains(&r.technique),
                    Protocol::CrossDataset => !training_techniques.contains(&r.technique),
                }
        })
        .collect()
}

/// Extracts the selected pairs once and evaluates every detector on them,
/// one report per detector.
pub fn run_protocol(
    detectors: &[Detector<'_>],
    manifest: &DatasetManifest,
    extractor: &FeatureExtractor,
    protocol: Protocol,
    training_techniques: &BTreeSet<String>,
    dataset_id: &str,
) -> Result<Vec<MetricsReport>> {
    let records = select_records(manifest, protocol, training_techniques);
    if !records.iter().any(|r| !r.label.is_real()) {
        return Err(Error::Validation(format!(
            "protocol {protocol} selected no fake-real pairs from {dataset_id}"
        )));
    }
    let pairs = extract_records(manifest, &records, extractor)?;
    detectors
        .iter()
        .map(|d| evaluate_pairs(d, &pairs, protocol, dataset_id))
        .collect()
}
