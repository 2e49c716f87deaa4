//! Run configuration: defaults, an optional flat TOML file, and flag
//! overrides, merged with precedence flags > file > defaults.
//!
//! Every key is optional:
//!
//! ```toml
//! seed = 0                      # training seed for both detectors
//! backbone = "toy-conv4"
//! layers = ["block1", "block2", "block3", "block4"]
//! style_mode = "gram"           # or "raw-embedding"
//! backbone_seed = 7
//! alpha = 0.5                   # identity-loss weight
//! classifier_learning_rate = 0.001
//! classifier_batch_size = 64
//! classifier_epochs = 50
//! anomaly_learning_rate = 0.003
//! anomaly_batch_size = 32
//! anomaly_epochs = 60
//! latent_dim = 64
//! augment_copies = 0
//! k = 2.0                       # anomaly threshold multiplier
//! decision_cutoff = 0.5         # classifier probability cutoff
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyConfig, DEFAULT_K};
use crate::classifier::{ClassifierConfig, DEFAULT_DECISION_CUTOFF};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureExtractorConfig, StyleMode};
use crate::util;

/// Partial configuration as read from a file or collected from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub backbone: Option<String>,
    pub layers: Option<Vec<String>>,
    pub style_mode: Option<StyleMode>,
    pub backbone_seed: Option<u64>,
    pub alpha: Option<f64>,
    pub classifier_learning_rate: Option<f64>,
    pub classifier_batch_size: Option<usize>,
    pub classifier_epochs: Option<usize>,
    pub anomaly_learning_rate: Option<f64>,
    pub anomaly_batch_size: Option<usize>,
    pub anomaly_epochs: Option<usize>,
    pub latent_dim: Option<usize>,
    pub augment_copies: Option<usize>,
    pub k: Option<f64>,
    pub decision_cutoff: Option<f64>,
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Field-wise `self` if set, otherwise `lower`.
    pub fn or(self, lower: ConfigOverrides) -> ConfigOverrides {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigOverrides { $($f: self.$f.or(lower.$f)),* } };
        }
        pick!(
            seed,
            backbone,
            layers,
            style_mode,
            backbone_seed,
            alpha,
            classifier_learning_rate,
            classifier_batch_size,
            classifier_epochs,
            anomaly_learning_rate,
            anomaly_batch_size,
            anomaly_epochs,
            latent_dim,
            augment_copies,
            k,
            decision_cutoff
        )
    }
}

/// Fully resolved configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub features: FeatureExtractorConfig,
    pub classifier: ClassifierConfig,
    pub anomaly: AnomalyConfig,
    pub k: f64,
    pub decision_cutoff: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::resolve(ConfigOverrides::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    /// Applies `overrides` on top of the desk-scale defaults.
    pub fn resolve(o: ConfigOverrides) -> Result<Self> {
        let mut features = FeatureExtractorConfig::default();
        if let Some(b) = o.backbone {
            features.backbone_id = b;
        }
        if let Some(l) = o.layers {
            features.layer_ids = l;
        }
        if let Some(m) = o.style_mode {
            features.style_mode = m;
        }
        if let Some(s) = o.backbone_seed {
            features.seed = s;
        }
        // building the extractor checks the backbone and layer ids
        FeatureExtractor::new(&features)?;

        let seed = o.seed.unwrap_or(0);
        let base = ClassifierConfig::default();
        let classifier = ClassifierConfig {
            alpha: o.alpha.unwrap_or(base.alpha),
            learning_rate: o.classifier_learning_rate.unwrap_or(base.learning_rate),
            batch_size: o.classifier_batch_size.unwrap_or(base.batch_size),
            epochs: o.classifier_epochs.unwrap_or(base.epochs),
            augment_copies: o.augment_copies.unwrap_or(base.augment_copies),
            seed,
            ..base
        };
        let base = AnomalyConfig::desk_scale();
        let anomaly = AnomalyConfig {
            learning_rate: o.anomaly_learning_rate.unwrap_or(base.learning_rate),
            batch_size: o.anomaly_batch_size.unwrap_or(base.batch_size),
            epochs: o.anomaly_epochs.unwrap_or(base.epochs),
            latent_dim: o.latent_dim.unwrap_or(base.latent_dim),
            augment_copies: o.augment_copies.unwrap_or(base.augment_copies),
            seed,
            ..base
        };
        let config = Self {
            features,
            classifier,
            anomaly,
            k: o.k.unwrap_or(DEFAULT_K),
            decision_cutoff: o.decision_cutoff.unwrap_or(DEFAULT_DECISION_CUTOFF),
        };
        config.validate()?;
        Ok(config)
    }

    /// `flags` over the optional file over defaults.
    pub fn from_sources(file: Option<&Path>, flags: ConfigOverrides) -> Result<Self> {
        let file = match file {
            Some(p) => ConfigOverrides::load(p)?,
            None => ConfigOverrides::default(),
        };
        Self::resolve(flags.or(file))
    }

    pub fn validate(&self) -> Result<()> {
        // input layouts are filled in at training time
        let probe_c = ClassifierConfig {
            layer_dims: vec![1],
            ..self.classifier.clone()
        };
        probe_c.validate()?;
        AnomalyConfig {
            input_dim: 1,
            ..self.anomaly.clone()
        }
        .validate()?;
        if !self.k.is_finite() {
            return Err(Error::Config(format!("k must be finite, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.decision_cutoff) {
            return Err(Error::Config(format!(
                "decision_cutoff must lie in [0, 1], got {}",
                self.decision_cutoff
            )));
        }
        Ok(())
    }

    /// Fingerprint of everything that shapes a trained model. The decision
    /// parameters `k` and `decision_cutoff` are excluded: they can be changed
    /// after training without invalidating a checkpoint.
    pub fn fingerprint(&self) -> String {
        util::fingerprint(&(&self.features, &self.classifier, &self.anomaly))
    }
}
