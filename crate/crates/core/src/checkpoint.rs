//! Self-describing JSON checkpoints for both detectors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyState, DualEncoderModel, ThresholdCalibration};
use crate::classifier::{ClassifierModel, ClassifierState};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::FeatureExtractorConfig;
use crate::verdict::Method;

pub const CHECKPOINT_FORMAT: &str = "styleswap-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub method: Method,
    pub run_fingerprint: String,
    pub fe_fingerprint: String,
    pub run_config: RunConfig,
    /// Anomaly threshold; absent until calibrated and for classifiers.
    pub calibration: Option<ThresholdCalibration>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier: Option<ClassifierState>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anomaly: Option<AnomalyState>,
}

impl Checkpoint {
    fn new(method: Method, run_config: &RunConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            method,
            run_fingerprint: run_config.fingerprint(),
            fe_fingerprint: run_config.features.fingerprint(),
            run_config: run_config.clone(),
            calibration: None,
            classifier: None,
            anomaly: None,
        }
    }

    pub fn from_classifier(model: &ClassifierModel, run_config: &RunConfig) -> Self {
        Self {
            classifier: Some(model.to_state()),
            ..Self::new(Method::Classifier, run_config)
        }
    }

    pub fn from_anomaly(model: &DualEncoderModel, run_config: &RunConfig) -> Self {
        Self {
            calibration: model.calibration,
            anomaly: Some(model.to_state()),
            ..Self::new(Method::Anomaly, run_config)
        }
    }

    pub fn classifier_model(&self) -> Result<ClassifierModel> {
        match (&self.method, &self.classifier) {
            (Method::Classifier, Some(state)) => ClassifierModel::from_state(state.clone()),
            _ => Err(Error::Config(format!("checkpoint holds a {} model, not a classifier", self.method))),
        }
    }

    pub fn anomaly_model(&self) -> Result<DualEncoderModel> {
        match (&self.method, &self.anomaly) {
            (Method::Anomaly, Some(state)) => {
                let mut model = DualEncoderModel::from_state(state.clone())?;
                model.calibration = self.calibration;
                Ok(model)
            }
            _ => Err(Error::Config(format!("checkpoint holds a {} model, not an anomaly detector", self.method))),
        }
    }

    pub fn set_calibration(&mut self, calibration: ThresholdCalibration) {
        self.calibration = Some(calibration);
        if let Some(state) = &mut self.anomaly {
            state.calibration = Some(calibration);
        }
    }

    /// Refuses to pair this checkpoint with a different feature configuration.
    pub fn check_features(&self, fe: &FeatureExtractorConfig) -> Result<()> {
        if fe.fingerprint() != self.fe_fingerprint {
            return Err(Error::Config(
                "feature extractor configuration does not match the checkpoint".into(),
            ));
        }
        Ok(())
    }

    /// Refuses a run configuration other than the one that trained this model.
    pub fn check_run(&self, run: &RunConfig) -> Result<()> {
        if run.fingerprint() != self.run_fingerprint {
            return Err(Error::Config(format!(
                "run configuration fingerprint {} does not match checkpoint fingerprint {}",
                run.fingerprint(),
                self.run_fingerprint
            )));
        }
        Ok(())
    }

    fn check_integrity(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", self.format)));
        }
        if self.run_config.fingerprint() != self.run_fingerprint
            || self.run_config.features.fingerprint() != self.fe_fingerprint
        {
            return Err(Error::Config("checkpoint fingerprints do not match its configuration".into()));
        }
        let fe = match (self.method, &self.classifier, &self.anomaly) {
            (Method::Classifier, Some(s), None) => &s.fe_config,
            (Method::Anomaly, None, Some(s)) => &s.fe_config,
            _ => return Err(Error::Config(format!("checkpoint body does not match method {}", self.method))),
        };
        if fe.as_ref().is_some_and(|fe| fe.fingerprint() != self.fe_fingerprint) {
            return Err(Error::Config("model was trained with different features than the checkpoint records".into()));
        }
        Ok(())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut json = serde_json::to_vec(checkpoint)?;
    json.push(b'\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("{} is not a checkpoint: {e}", path.display())))?;
    checkpoint.check_integrity()?;
    Ok(checkpoint)
}
