//! Pair manifests, image preprocessing and augmentation, and the synthetic
//! identity-style dataset generator.

pub mod augment;
pub mod manifest;
pub mod preprocess;
pub mod synthetic;

pub use augment::{augment, AugmentPlan};
pub use manifest::{
    load_manifest, save_manifest, split_dataset, split_dataset_with_holdout, split_dataset_with_test, DatasetManifest, PairLabel, PairRecord,
    Split, GENUINE_TECHNIQUE,
};
pub use preprocess::{load_image, preprocess_image, FaceAligner, PreAligned};
pub use synthetic::{generate_dataset, generate_synthetic_dataset, SyntheticConfig, SyntheticIdentity};
