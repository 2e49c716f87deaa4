use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictLabel {
    Real,
    FaceSwapped,
}

impl VerdictLabel {
    pub fn is_face_swapped(self) -> bool {
        self == VerdictLabel::FaceSwapped
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictLabel::Real => "real",
            VerdictLabel::FaceSwapped => "face-swapped",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Classifier,
    Anomaly,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Classifier => "classifier",
            Method::Anomaly => "anomaly",
        })
    }
}

/// Decision for one reference/suspicious pair.
///
/// For the classifier, `score` is the probability that the pair is
/// real-real; for the anomaly detector it is the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub score: f64,
    pub method: Method,
    pub threshold_used: Option<f64>,
}

impl Verdict {
    /// Face-swapped iff the real-real probability is below `cutoff`.
    pub fn from_probability(probability: f64, cutoff: f64) -> Self {
        Self {
            label: if probability < cutoff {
                VerdictLabel::FaceSwapped
            } else {
                VerdictLabel::Real
            },
            score: probability,
            method: Method::Classifier,
            threshold_used: Some(cutoff),
        }
    }

    /// Face-swapped iff the anomaly score strictly exceeds `threshold`.
    pub fn from_anomaly_score(score: f64, threshold: f64) -> Self {
        Self {
            label: if score > threshold {
                VerdictLabel::FaceSwapped
            } else {
                VerdictLabel::Real
            },
            score,
            method: Method::Anomaly,
            threshold_used: Some(threshold),
        }
    }

    /// Score oriented so that larger means more likely face-swapped.
    pub fn suspicion(&self) -> f64 {
        match self.method {
            Method::Classifier => 1.0 - self.score,
            Method::Anomaly => self.score,
        }
    }
}
