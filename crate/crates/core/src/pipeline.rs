//! Feature extraction over manifest records, shared by training,
//! calibration and evaluation.

use crate::data::augment::augment;
use crate::data::{load_image, DatasetManifest, PairLabel, PairRecord};
use crate::error::Result;
use crate::features::{FeatureExtractor, StyleFeatureStack};
use crate::util::derive_seed;

/// Extracted style stacks of one pair.
#[derive(Debug, Clone)]
pub struct PairFeatures {
    pub pair_id: String,
    pub label: PairLabel,
    pub technique: String,
    pub reference: StyleFeatureStack,
    pub suspicious: StyleFeatureStack,
}

pub fn extract_record(
    manifest: &DatasetManifest,
    record: &PairRecord,
    extractor: &FeatureExtractor,
) -> Result<PairFeatures> {
    let reference = load_image(&manifest.real_path(record))?;
    let suspicious = load_image(&manifest.suspicious_path(record))?;
    let (reference, suspicious) = extractor.extract_pair_features(&reference, &suspicious)?;
    Ok(PairFeatures {
        pair_id: record.pair_id.clone(),
        label: record.label,
        technique: record.technique.clone(),
        reference,
        suspicious,
    })
}

pub fn extract_records(
    manifest: &DatasetManifest,
    records: &[&PairRecord],
    extractor: &FeatureExtractor,
) -> Result<Vec<PairFeatures>> {
    records.iter().map(|r| extract_record(manifest, r, extractor)).collect()
}

/// Like [`extract_records`], followed by `copies` augmented views of each
/// pair. Augmentation seeds derive from `(seed, pair_id, copy)`.
pub fn extract_records_augmented(
    manifest: &DatasetManifest,
    records: &[&PairRecord],
    extractor: &FeatureExtractor,
    copies: usize,
    seed: u64,
) -> Result<Vec<PairFeatures>> {
    let mut out = extract_records(manifest, records, extractor)?;
    for record in records {
        let reference = load_image(&manifest.real_path(record))?;
        let suspicious = load_image(&manifest.suspicious_path(record))?;
        for k in 0..copies {
            let key = format!("{}#{k}", record.pair_id);
            let r = augment(&reference, derive_seed(seed, &format!("{key}/ref")));
            let s = augment(&suspicious, derive_seed(seed, &format!("{key}/sus")));
            let (reference, suspicious) = extractor.extract_pair_features(&r, &s)?;
            out.push(PairFeatures {
                pair_id: key,
                label: record.label,
                technique: record.technique.clone(),
                reference,
                suspicious,
            });
        }
    }
    Ok(out)
}
