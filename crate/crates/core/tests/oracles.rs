//! Behaviour of both detectors and the feature pipeline against the
//! synthetic oracle, whose ground truth is known by construction.

mod common;

use std::sync::OnceLock;

use styleswap::anomaly::{anomaly_score, train_anomaly_on_features, AnomalyConfig, DualEncoderModel};
use styleswap::classifier::{classify, predict_pair, train_classifier_on_features, ClassifierConfig, ClassifierModel};
use styleswap::data::preprocess::preprocess_rgb;
use styleswap::data::synthetic::{synthesize_pair, SyntheticConfig};
use styleswap::data::PairLabel;
use styleswap::losses::cosine_similarity;
use styleswap::pipeline::PairFeatures;
use styleswap::util::mean;
use styleswap::verdict::VerdictLabel;

use common::{extractor, features, BOTH, REAL};

fn dataset() -> SyntheticConfig {
    SyntheticConfig::new(11, 20, 5000)
}

fn classifier() -> &'static ClassifierModel {
    static MODEL: OnceLock<ClassifierModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let fx = extractor();
        let train = features(&dataset(), &fx, 0..600, &BOTH);
        let val = features(&dataset(), &fx, 600..700, &BOTH);
        let cfg = ClassifierConfig { epochs: 12, ..Default::default() }.for_extractor(&fx);
        train_classifier_on_features(&train, &val, &cfg).unwrap()
    })
}

fn anomaly() -> &'static DualEncoderModel {
    static MODEL: OnceLock<DualEncoderModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let fx = extractor();
        let train = features(&dataset(), &fx, 0..600, &REAL);
        let cfg = AnomalyConfig { epochs: 30, ..AnomalyConfig::desk_scale() }.for_extractor(&fx);
        train_anomaly_on_features(&train, &[], &cfg).unwrap()
    })
}

fn held_out() -> &'static [PairFeatures] {
    static DATA: OnceLock<Vec<PairFeatures>> = OnceLock::new();
    DATA.get_or_init(|| features(&dataset(), &extractor(), 2000..2200, &BOTH))
}

fn split_scores(pairs: &[PairFeatures], score: impl Fn(&PairFeatures) -> f64) -> (Vec<f64>, Vec<f64>) {
    let (mut real, mut fake) = (Vec::new(), Vec::new());
    for p in pairs {
        if p.label.is_real() {
            real.push(score(p));
        } else {
            fake.push(score(p));
        }
    }
    (real, fake)
}

#[test]
fn same_identity_stacks_are_closer_than_different_identity_stacks() {
    let fx = extractor();
    let cfg = SyntheticConfig::new(21, 20, 5000);
    let mut wins = 0;
    for i in 0..1000 {
        let genuine = synthesize_pair(&cfg, PairLabel::RealReal, i).unwrap();
        // a genuine render of another identity from a different pair
        let other = (1..)
            .map(|k| synthesize_pair(&cfg, PairLabel::RealReal, 5000 + 7 * i + k).unwrap())
            .find(|p| p.reference_identity != genuine.reference_identity)
            .unwrap();
        let anchor = fx.extract_stack(&preprocess_rgb(&genuine.reference)).unwrap();
        let positive = fx.extract_stack(&preprocess_rgb(&genuine.suspicious)).unwrap();
        let negative = fx.extract_stack(&preprocess_rgb(&other.reference)).unwrap();
        let pos = cosine_similarity(anchor.stacked(), positive.stacked()).unwrap();
        let neg = cosine_similarity(anchor.stacked(), negative.stacked()).unwrap();
        if pos > neg {
            wins += 1;
        }
    }
    assert!(wins >= 950, "same identity closer in only {wins}/1000 samples");
}

fn mean_color(img: &image::RgbImage) -> [f64; 3] {
    let mut s = [0.0; 3];
    for p in img.pixels() {
        for c in 0..3 {
            s[c] += p.0[c] as f64;
        }
    }
    let n = (img.width() * img.height()) as f64;
    s.map(|v| v / n)
}

fn nearest(centroids: &[[f64; 3]], x: [f64; 3]) -> usize {
    let d = |c: &[f64; 3]| (0..3).map(|k| (c[k] - x[k]).powi(2)).sum::<f64>();
    (0..centroids.len()).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap()
}

#[test]
fn nearest_centroid_colour_baseline_beats_eighty_percent() {
    let cfg = SyntheticConfig::new(31, 20, 5000);
    let n = cfg.n_identities as usize;
    let mut sums = vec![[0.0; 3]; n];
    let mut counts = vec![0usize; n];
    for i in 0..400 {
        let p = synthesize_pair(&cfg, PairLabel::RealReal, i).unwrap();
        let id = p.reference_identity as usize;
        for img in [&p.reference, &p.suspicious] {
            let c = mean_color(img);
            for k in 0..3 {
                sums[id][k] += c[k];
            }
            counts[id] += 1;
        }
    }
    assert!(counts.iter().all(|&c| c > 0));
    let centroids: Vec<[f64; 3]> = sums.iter().zip(&counts).map(|(s, &c)| s.map(|v| v / c as f64)).collect();

    let mut correct = 0;
    let mut total = 0;
    for i in 1000..1200 {
        for label in [PairLabel::RealReal, PairLabel::FakeReal] {
            let p = synthesize_pair(&cfg, label, i).unwrap();
            let same = nearest(&centroids, mean_color(&p.reference)) == nearest(&centroids, mean_color(&p.suspicious));
            if same == label.is_real() {
                correct += 1;
            }
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    assert!(acc > 0.8, "centroid baseline accuracy {acc}");
    assert!(acc < 1.0, "centroid baseline is perfect; the task is trivial");
}

#[test]
fn trained_classifier_ranks_real_pairs_above_fake_pairs() {
    let model = classifier();
    let (real, fake) = split_scores(held_out(), |p| predict_pair(model, &p.reference, &p.suspicious).unwrap());
    assert_eq!((real.len(), fake.len()), (200, 200));
    assert!(mean(&real) > mean(&fake), "{} vs {}", mean(&real), mean(&fake));
}

#[test]
fn classifier_training_loss_falls() {
    let h = &classifier().history;
    assert!(h.len() >= 10);
    assert!(h[9].train_loss < h[0].train_loss, "{} !< {}", h[9].train_loss, h[0].train_loss);
}

#[test]
fn classifier_flags_swapped_images_and_accepts_identical_ones() {
    let model = classifier();
    let fx = extractor();
    let mut flagged = 0;
    for i in 3000..3200 {
        let p = synthesize_pair(&dataset(), PairLabel::FakeReal, i).unwrap();
        let (r, s) = (preprocess_rgb(&p.reference), preprocess_rgb(&p.suspicious));
        if classify(model, &r, &s, &fx, 0.5).unwrap().label == VerdictLabel::FaceSwapped {
            flagged += 1;
        }
        if i < 3020 {
            assert_eq!(classify(model, &r, &r, &fx, 0.5).unwrap().label, VerdictLabel::Real);
        }
    }
    assert!(flagged >= 190, "flagged {flagged}/200 swapped pairs");
}

#[test]
fn identity_loss_weight_changes_training() {
    let fx = extractor();
    let data = features(&SyntheticConfig::new(41, 10, 100), &fx, 0..32, &BOTH);
    let base = ClassifierConfig { epochs: 2, conv_widths: [8, 8, 8, 8], ..Default::default() }.for_extractor(&fx);
    let a = train_classifier_on_features(&data, &[], &ClassifierConfig { alpha: 0.0, ..base.clone() }).unwrap();
    let b = train_classifier_on_features(&data, &[], &ClassifierConfig { alpha: 0.5, ..base.clone() }).unwrap();
    let again = train_classifier_on_features(&data, &[], &ClassifierConfig { alpha: 0.5, ..base }).unwrap();
    assert_ne!(a.parameters(), b.parameters());
    assert_eq!(b.parameters(), again.parameters());
}

#[test]
fn trained_anomaly_model_scores_fakes_higher() {
    let model = anomaly();
    let (real, fake) = split_scores(held_out(), |p| anomaly_score(model, &p.reference, &p.suspicious).unwrap());
    assert!(mean(&real) < mean(&fake), "{} vs {}", mean(&real), mean(&fake));
}

#[test]
fn anomaly_training_loss_falls() {
    let h = &anomaly().history;
    assert!(h.len() >= 20);
    assert!(h[19].train_loss < h[0].train_loss, "{} !< {}", h[19].train_loss, h[0].train_loss);
}
