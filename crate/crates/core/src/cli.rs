//! Command-line front end.
//!
//! Exit codes: 0 success / real verdict, 1 face-swapped verdict, 2 usage or
//! input error, 3 numeric failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::anomaly::{calibrate_threshold, detect_anomaly, train_anomaly};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::classifier::{classify, train_classifier};
use crate::config::{ConfigOverrides, RunConfig};
use crate::data::synthetic::{generate_dataset, SyntheticConfig, DEFAULT_ARTIFACT_LEVEL, MANIFEST_FILE};
use crate::data::{load_image, load_manifest, save_manifest, split_dataset_with_test, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::eval::{run_protocol, Detector, MetricsReport, Protocol};
use crate::features::FeatureExtractor;
use crate::util;
use crate::verdict::Method;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FACE_SWAPPED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "styleswap", version, about = "Face-swap detection from style features")]
pub struct Cli {
    /// Flat TOML configuration file; flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Classifier,
    Anomaly,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Classifier => Method::Classifier,
            MethodArg::Anomaly => Method::Anomaly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    InDataset,
    CrossDataset,
    All,
}

/// Overrides shared by the model commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Identity-loss weight of the classifier.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub augment_copies: Option<usize>,
    /// Anomaly threshold multiplier.
    #[arg(long)]
    pub k: Option<f64>,
    /// Classifier probability cutoff.
    #[arg(long)]
    pub cutoff: Option<f64>,
}

impl ConfigFlags {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            seed: self.seed,
            alpha: self.alpha,
            augment_copies: self.augment_copies,
            k: self.k,
            decision_cutoff: self.cutoff,
            ..Default::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic pair dataset and its manifest.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        identities: u64,
        /// Pairs per class.
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        /// Blending-artifact level of the swapped images, in [0, 1].
        #[arg(long, default_value_t = DEFAULT_ARTIFACT_LEVEL)]
        artifact: f64,
        /// Fraction of each class held out as the test split.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Fraction of the remainder used for training (the rest validates).
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Train a detector and write its checkpoint.
    Train {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Set the anomaly threshold from real-real validation pairs.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Judge one reference/suspicious pair; the exit code carries the verdict.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        suspicious: PathBuf,
        /// Expected method; must match the checkpoint.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Score detectors under the evaluation protocols and write a report.
    Evaluate {
        /// Manifest the detectors were trained on; its test split is the
        /// in-dataset set.
        #[arg(long)]
        manifest: PathBuf,
        /// Dataset with techniques unseen in training.
        #[arg(long)]
        cross_manifest: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        anomaly: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        protocol: ProtocolArg,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

/// Report file written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub fe_fingerprint: String,
    pub classifier_fingerprint: Option<String>,
    pub anomaly_fingerprint: Option<String>,
    pub reports: Vec<MetricsReport>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) | Error::NonFiniteLoss { .. } | Error::Degenerate(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` and runs the command, writing to `out` / `err`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(cli: &Cli, flags: ConfigOverrides) -> Result<RunConfig> {
    RunConfig::from_sources(cli.config.as_deref(), flags)
}

fn out_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let stdout = Path::new("<stdout>");
    match &cli.command {
        Command::GenerateData {
            out: dir,
            seed,
            identities,
            pairs,
            artifact,
            test_fraction,
            train_fraction,
        } => {
            let config = SyntheticConfig::new(*seed, *identities, *pairs).with_artifact(*artifact);
            let manifest = generate_dataset(&config, dir)?;
            let mut manifest = split_dataset_with_test(&manifest, *train_fraction, *test_fraction, *seed, &[])?;
            manifest.fingerprint = Some(util::fingerprint(&(
                seed,
                identities,
                pairs,
                artifact,
                test_fraction,
                train_fraction,
            )));
            let path = dir.join(MANIFEST_FILE);
            save_manifest(&manifest, &path)?;
            let real = manifest.records.iter().filter(|r| r.label.is_real()).count();
            writeln!(
                out,
                "wrote {} ({} real-real, {} fake-real; train {}, val {}, test {})",
                path.display(),
                real,
                manifest.len() - real,
                manifest.split(Split::Train).len(),
                manifest.split(Split::Val).len(),
                manifest.split(Split::Test).len(),
            )
            .map_err(out_err(stdout))?;
            Ok(EXIT_OK)
        }
        Command::Train {
            method,
            manifest,
            checkpoint,
            epochs,
            learning_rate,
            batch_size,
            flags,
        } => {
            let mut o = flags.overrides();
            match method {
                MethodArg::Classifier => {
                    o.classifier_epochs = *epochs;
                    o.classifier_learning_rate = *learning_rate;
                    o.classifier_batch_size = *batch_size;
                }
                MethodArg::Anomaly => {
                    o.anomaly_epochs = *epochs;
                    o.anomaly_learning_rate = *learning_rate;
                    o.anomaly_batch_size = *batch_size;
                }
            }
            let run_config = resolve(cli, o)?;
            if checkpoint.exists() {
                load_checkpoint(checkpoint)
                    .map_err(|e| Error::Config(format!("refusing to overwrite {}: {e}", checkpoint.display())))?
                    .check_run(&run_config)
                    .map_err(|e| Error::Config(format!("refusing to overwrite {}: {e}", checkpoint.display())))?;
            }
            let data = load_manifest(manifest)?;
            data.validate_paths()?;
            let (ck, summary) = match method {
                MethodArg::Classifier => {
                    let model = train_classifier(&data, &run_config.features, &run_config.classifier)?;
                    let last = model.history.last().expect("at least one epoch");
                    let best = model.history.iter().filter_map(|h| h.val_accuracy).fold(f64::NAN, f64::max);
                    (
                        Checkpoint::from_classifier(&model, &run_config),
                        format!(
                            "classifier: {} epochs, final train loss {:.6}, best val accuracy {:.4}",
                            model.history.len(),
                            last.train_loss,
                            best
                        ),
                    )
                }
                MethodArg::Anomaly => {
                    let model = train_anomaly(&data, &run_config.features, &run_config.anomaly)?;
                    let last = model.history.last().expect("at least one epoch");
                    (
                        Checkpoint::from_anomaly(&model, &run_config),
                        format!(
                            "anomaly: {} epochs, final train loss {:.6}",
                            model.history.len(),
                            last.train_loss
                        ),
                    )
                }
            };
            save_checkpoint(&ck, checkpoint)?;
            writeln!(out, "{summary}; wrote {}", checkpoint.display()).map_err(out_err(stdout))?;
            Ok(EXIT_OK)
        }
        Command::Calibrate {
            checkpoint,
            manifest,
            flags,
        } => {
            let run_config = resolve(cli, flags.overrides())?;
            let mut ck = load_checkpoint(checkpoint)?;
            ck.check_features(&run_config.features)?;
            let model = ck.anomaly_model()?;
            let data = load_manifest(manifest)?;
            let calibration = calibrate_threshold(&model, &data, &ck.run_config.features, run_config.k)?;
            ck.set_calibration(calibration);
            save_checkpoint(&ck, checkpoint)?;
            writeln!(
                out,
                "mu {} sigma {} k {} threshold {}",
                calibration.mu, calibration.sigma, calibration.k, calibration.threshold
            )
            .map_err(out_err(stdout))?;
            Ok(EXIT_OK)
        }
        Command::Detect {
            checkpoint,
            reference,
            suspicious,
            method,
            flags,
        } => {
            let run_config = resolve(cli, flags.overrides())?;
            let ck = load_checkpoint(checkpoint)?;
            ck.check_features(&run_config.features)?;
            if let Some(m) = method {
                if Method::from(*m) != ck.method {
                    return Err(Error::Config(format!(
                        "--method {} but {} holds a {} model",
                        Method::from(*m),
                        checkpoint.display(),
                        ck.method
                    )));
                }
            }
            let reference = load_image(reference)?;
            let suspicious = load_image(suspicious)?;
            let extractor = FeatureExtractor::new(&ck.run_config.features)?;
            let verdict = match ck.method {
                Method::Classifier => classify(
                    &ck.classifier_model()?,
                    &reference,
                    &suspicious,
                    &extractor,
                    run_config.decision_cutoff,
                )?,
                Method::Anomaly => {
                    let model = ck.anomaly_model()?;
                    detect_anomaly(&model, &reference, &suspicious, &extractor, model.calibration.as_ref())?
                }
            };
            writeln!(out, "{}", serde_json::to_string(&verdict)?).map_err(out_err(stdout))?;
            Ok(if verdict.label.is_face_swapped() {
                EXIT_FACE_SWAPPED
            } else {
                EXIT_OK
            })
        }
        Command::Evaluate {
            manifest,
            cross_manifest,
            classifier,
            anomaly,
            protocol,
            report,
            flags,
        } => {
            let run_config = resolve(cli, flags.overrides())?;
            if classifier.is_none() && anomaly.is_none() {
                return Err(Error::Config("evaluate needs --classifier and/or --anomaly".into()));
            }
            let load = |p: &Option<PathBuf>| -> Result<Option<Checkpoint>> {
                p.as_deref()
                    .map(|p| {
                        let ck = load_checkpoint(p)?;
                        ck.check_features(&run_config.features)?;
                        Ok(ck)
                    })
                    .transpose()
            };
            let (cls_ck, ano_ck) = (load(classifier)?, load(anomaly)?);
            let cls_model = cls_ck.as_ref().map(Checkpoint::classifier_model).transpose()?;
            let ano_model = ano_ck.as_ref().map(Checkpoint::anomaly_model).transpose()?;
            let mut detectors = Vec::new();
            if let Some(model) = &cls_model {
                detectors.push(Detector::Classifier {
                    model,
                    cutoff: run_config.decision_cutoff,
                });
            }
            if let Some(model) = &ano_model {
                let calibration = model
                    .calibration
                    .as_ref()
                    .ok_or_else(|| Error::Config("anomaly checkpoint is not calibrated".into()))?;
                detectors.push(Detector::Anomaly { model, calibration });
            }

            let extractor = FeatureExtractor::new(&run_config.features)?;
            let data = load_manifest(manifest)?;
            let trained: BTreeSet<String> =
                DatasetManifest::fake_techniques(data.split(Split::Train)).into_iter().collect();
            let mut reports = Vec::new();
            if matches!(protocol, ProtocolArg::InDataset | ProtocolArg::All) {
                reports.extend(run_protocol(
                    &detectors,
                    &data,
                    &extractor,
                    Protocol::InDataset,
                    &trained,
                    &dataset_id(manifest),
                )?);
            }
            if matches!(protocol, ProtocolArg::CrossDataset | ProtocolArg::All) {
                let (cross, path) = match cross_manifest {
                    Some(p) => (load_manifest(p)?, p),
                    None => (data.clone(), manifest),
                };
                reports.extend(run_protocol(
                    &detectors,
                    &cross,
                    &extractor,
                    Protocol::CrossDataset,
                    &trained,
                    &dataset_id(path),
                )?);
            }
            let doc = EvaluationReport {
                fe_fingerprint: run_config.features.fingerprint(),
                classifier_fingerprint: cls_ck.map(|c| c.run_fingerprint),
                anomaly_fingerprint: ano_ck.map(|c| c.run_fingerprint),
                reports,
            };
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut json = serde_json::to_vec_pretty(&doc)?;
            json.push(b'\n');
            std::fs::write(report, json).map_err(|e| Error::io(report, e))?;
            write_summary(out, &doc.reports).map_err(out_err(stdout))?;
            Ok(EXIT_OK)
        }
    }
}

/// Parent directory name of a manifest, e.g. `data/train/manifest.jsonl` → `train`.
fn dataset_id(manifest: &Path) -> String {
    manifest
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| manifest.display().to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn write_summary(out: &mut dyn Write, reports: &[MetricsReport]) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<10} {:<13} {:>6} {:>8} {:>9} {:>8} {:>8} {:>8}",
        "method", "protocol", "pairs", "accuracy", "precision", "recall", "f1", "auc"
    )?;
    for r in reports {
        writeln!(
            out,
            "{:<10} {:<13} {:>6} {:>8} {:>9} {:>8} {:>8} {:>8}",
            r.method.to_string(),
            r.protocol.to_string(),
            r.n_pairs,
            fmt_opt(r.accuracy),
            fmt_opt(r.precision),
            fmt_opt(r.recall),
            fmt_opt(r.f1),
            fmt_opt(r.auc)
        )?;
    }
    Ok(())
}
