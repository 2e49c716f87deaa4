//! Python bindings: the losses, fusion and calibration primitives, the
//! feature extractor, trained detectors loaded from checkpoints, synthetic
//! data generation, and the command line.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use styleswap::anomaly::{detect_anomaly, DualEncoderModel, ThresholdCalibration};
use styleswap::checkpoint::load_checkpoint;
use styleswap::classifier::{classify, ClassifierModel, DEFAULT_DECISION_CUTOFF};
use styleswap::data::synthetic::{generate_dataset, SyntheticConfig, DEFAULT_ARTIFACT_LEVEL};
use styleswap::data::{load_image, PairLabel};
use styleswap::features::{FeatureExtractorConfig, LayerActivation, StyleFeatureStack, StyleMode};
use styleswap::losses::{self, PairBatch};
use styleswap::verdict::{Method, Verdict};

create_exception!(pystyleswap, StyleswapError, PyException);

fn err(e: styleswap::Error) -> PyErr {
    match e {
        styleswap::Error::Validation(m) | styleswap::Error::Config(m) => PyValueError::new_err(m),
        other => StyleswapError::new_err(other.to_string()),
    }
}

fn stacks(layers: Vec<Vec<Vec<f64>>>) -> Vec<StyleFeatureStack> {
    layers.into_iter().map(StyleFeatureStack::from_layers).collect()
}

/// Cosine similarity of two equal-length vectors.
#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    losses::cosine_similarity(&a, &b).map_err(err)
}

/// Stacked identity loss. Each pair side is a list of per-layer vectors;
/// labels are 1 for real-real and 0 for fake-real.
#[pyfunction]
fn stacked_identity_loss(reference: Vec<Vec<Vec<f64>>>, suspicious: Vec<Vec<Vec<f64>>>, labels: Vec<f64>) -> PyResult<f64> {
    let (r, s) = (stacks(reference), stacks(suspicious));
    let batch = PairBatch {
        ref_stacks: r.iter().collect(),
        sus_stacks: s.iter().collect(),
        labels,
    };
    losses::stacked_identity_loss(&batch).map(|l| l.value).map_err(err)
}

#[pyfunction]
fn bce_loss(predictions: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    losses::bce_loss(&predictions, &labels).map(|l| l.value).map_err(err)
}

/// `bce + alpha * sil`.
#[pyfunction]
#[pyo3(signature = (bce, sil, alpha = 0.5))]
fn final_loss(bce: f64, sil: f64, alpha: f64) -> PyResult<f64> {
    let v = |value| losses::LossValue { value, gradients: Vec::new() };
    losses::final_loss(&v(bce), &v(sil), alpha).map(|l| l.value).map_err(err)
}

#[pyfunction]
fn reconstruction_loss(x1: Vec<f64>, x2: Vec<f64>, x_hat: Vec<f64>) -> PyResult<f64> {
    losses::reconstruction_loss(&x1, &x2, &x_hat).map(|l| l.value).map_err(err)
}

/// Element-wise product of two latents.
#[pyfunction]
fn fuse_latents(z1: Vec<f64>, z2: Vec<f64>) -> PyResult<Vec<f64>> {
    styleswap::anomaly::fuse_latents(&z1, &z2).map_err(err)
}

/// Row-major `c × c` Gram matrix of a flat `c × h × w` activation.
#[pyfunction]
fn gram_matrix(data: Vec<f64>, channels: usize, height: usize, width: usize) -> PyResult<Vec<f64>> {
    let act = LayerActivation::new("input", channels, height, width, data).map_err(err)?;
    styleswap::features::gram_matrix(&act).map_err(err)
}

/// ROC AUC where `fake[i]` marks the positive (face-swapped) class and
/// larger scores are more suspicious.
#[pyfunction]
fn auc(scores: Vec<f64>, fake: Vec<bool>) -> PyResult<f64> {
    let truth: Vec<PairLabel> = fake
        .into_iter()
        .map(|f| if f { PairLabel::FakeReal } else { PairLabel::RealReal })
        .collect();
    styleswap::eval::auc(&scores, &truth).map_err(err)
}

#[pyclass(name = "ThresholdCalibration", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCalibration(ThresholdCalibration);

#[pymethods]
impl PyCalibration {
    /// `mu + k * sigma`.
    #[staticmethod]
    #[pyo3(signature = (mu, sigma, k = 2.0))]
    fn from_moments(mu: f64, sigma: f64, k: f64) -> PyResult<Self> {
        ThresholdCalibration::from_moments(mu, sigma, k).map(Self).map_err(err)
    }

    /// Mean and population standard deviation of validation losses.
    #[staticmethod]
    #[pyo3(signature = (losses, k = 2.0))]
    fn from_losses(losses: Vec<f64>, k: f64) -> PyResult<Self> {
        ThresholdCalibration::from_losses(&losses, k).map(Self).map_err(err)
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn k(&self) -> f64 {
        self.0.k
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.threshold
    }

    fn __repr__(&self) -> String {
        format!(
            "ThresholdCalibration(mu={}, sigma={}, k={}, threshold={})",
            self.0.mu, self.0.sigma, self.0.k, self.0.threshold
        )
    }
}

#[pyclass(name = "FeatureExtractor", frozen)]
struct PyFeatureExtractor(styleswap::features::FeatureExtractor);

#[pymethods]
impl PyFeatureExtractor {
    #[new]
    #[pyo3(signature = (backbone = None, layers = None, raw_embedding = false, seed = None))]
    fn new(backbone: Option<String>, layers: Option<Vec<String>>, raw_embedding: bool, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = FeatureExtractorConfig::default();
        if let Some(b) = backbone {
            cfg.backbone_id = b;
        }
        if let Some(l) = layers {
            cfg.layer_ids = l;
        }
        if raw_embedding {
            cfg.style_mode = StyleMode::RawEmbedding;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        styleswap::features::FeatureExtractor::new(&cfg).map(Self).map_err(err)
    }

    #[getter]
    fn stack_len(&self) -> usize {
        self.0.stack_len()
    }

    /// Per-layer style vectors of the image at `path`.
    fn extract(&self, path: PathBuf) -> PyResult<Vec<Vec<f64>>> {
        let image = load_image(&path).map_err(err)?;
        self.0.extract_stack(&image).map(|s| s.unstack()).map_err(err)
    }

    fn fingerprint(&self) -> String {
        self.0.config().fingerprint()
    }
}

fn verdict_dict<'py>(py: Python<'py>, v: &Verdict) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_string(v).map_err(|e| StyleswapError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (json,))
}

enum Model {
    Classifier(ClassifierModel),
    Anomaly(DualEncoderModel),
}

/// A trained detector loaded from a checkpoint.
#[pyclass(name = "Detector", frozen)]
struct PyDetector {
    model: Model,
    extractor: styleswap::features::FeatureExtractor,
}

#[pymethods]
impl PyDetector {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = load_checkpoint(&path).map_err(err)?;
        let extractor = styleswap::features::FeatureExtractor::new(&ck.run_config.features).map_err(err)?;
        let model = match ck.method {
            Method::Classifier => Model::Classifier(ck.classifier_model().map_err(err)?),
            Method::Anomaly => Model::Anomaly(ck.anomaly_model().map_err(err)?),
        };
        Ok(Self { model, extractor })
    }

    #[getter]
    fn method(&self) -> &'static str {
        match self.model {
            Model::Classifier(_) => "classifier",
            Model::Anomaly(_) => "anomaly",
        }
    }

    #[getter]
    fn calibration(&self) -> Option<PyCalibration> {
        match &self.model {
            Model::Anomaly(m) => m.calibration.map(PyCalibration),
            Model::Classifier(_) => None,
        }
    }

    /// Verdict for a reference/suspicious image pair, as a dict with
    /// `label`, `score`, `method` and `threshold_used`.
    #[pyo3(signature = (reference, suspicious, cutoff = DEFAULT_DECISION_CUTOFF))]
    fn detect<'py>(
        &self,
        py: Python<'py>,
        reference: PathBuf,
        suspicious: PathBuf,
        cutoff: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = load_image(&reference).map_err(err)?;
        let s = load_image(&suspicious).map_err(err)?;
        let verdict = match &self.model {
            Model::Classifier(m) => classify(m, &r, &s, &self.extractor, cutoff),
            Model::Anomaly(m) => detect_anomaly(m, &r, &s, &self.extractor, m.calibration.as_ref()),
        }
        .map_err(err)?;
        verdict_dict(py, &verdict)
    }
}

/// Renders a synthetic pair dataset into `out_dir`; returns the number of
/// records written to its manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 7, identities = 20, pairs = 500, artifact = DEFAULT_ARTIFACT_LEVEL))]
fn generate_data(out_dir: PathBuf, seed: u64, identities: u64, pairs: usize, artifact: f64) -> PyResult<usize> {
    let cfg = SyntheticConfig::new(seed, identities, pairs).with_artifact(artifact);
    generate_dataset(&cfg, &out_dir).map(|m| m.len()).map_err(err)
}

/// Runs the command line with `args` (without the program name); returns
/// `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> (i32, String, String) {
    py.detach(|| {
        let (mut out, mut errs) = (Vec::new(), Vec::new());
        let argv = std::iter::once("styleswap".to_string()).chain(args);
        let code = styleswap::cli::run_from(argv, &mut out, &mut errs);
        (
            code,
            String::from_utf8_lossy(&out).into_owned(),
            String::from_utf8_lossy(&errs).into_owned(),
        )
    })
}

#[pymodule]
fn pystyleswap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StyleswapError", m.py().get_type::<StyleswapError>())?;
    m.add_class::<PyCalibration>()?;
    m.add_class::<PyFeatureExtractor>()?;
    m.add_class::<PyDetector>()?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(stacked_identity_loss, m)?)?;
    m.add_function(wrap_pyfunction!(bce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(final_loss, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruction_loss, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_latents, m)?)?;
    m.add_function(wrap_pyfunction!(gram_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(generate_data, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
