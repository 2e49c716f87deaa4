#![allow(dead_code)]

use std::ops::Range;

use styleswap::data::preprocess::preprocess_rgb;
use styleswap::data::synthetic::{synthesize_pair, SyntheticConfig};
use styleswap::data::manifest::GENUINE_TECHNIQUE;
use styleswap::data::PairLabel;
use styleswap::features::{FeatureExtractor, FeatureExtractorConfig};
use styleswap::pipeline::PairFeatures;

pub const BOTH: [PairLabel; 2] = [PairLabel::RealReal, PairLabel::FakeReal];
pub const REAL: [PairLabel; 1] = [PairLabel::RealReal];

pub fn extractor() -> FeatureExtractor {
    FeatureExtractor::new(&FeatureExtractorConfig::default()).unwrap()
}

/// Renders pair indices `range` of each label in memory and extracts them.
pub fn features(
    cfg: &SyntheticConfig,
    fx: &FeatureExtractor,
    range: Range<usize>,
    labels: &[PairLabel],
) -> Vec<PairFeatures> {
    let mut out = Vec::new();
    for i in range {
        for &label in labels {
            let p = synthesize_pair(cfg, label, i).unwrap();
            let (reference, suspicious) = fx
                .extract_pair_features(&preprocess_rgb(&p.reference), &preprocess_rgb(&p.suspicious))
                .unwrap();
            out.push(PairFeatures {
                pair_id: p.pair_id,
                label,
                technique: if label.is_real() { GENUINE_TECHNIQUE.into() } else { cfg.technique() },
                reference,
                suspicious,
            });
        }
    }
    out
}

/// Fraction of positive/negative pairs ranked correctly, ties counted half.
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                s += 1.0;
            } else if p == n {
                s += 0.5;
            }
        }
    }
    s / (pos.len() * neg.len()) as f64
}
