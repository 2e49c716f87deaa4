use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Pair label: `1` = real-real, `0` = fake-real.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PairLabel {
    FakeReal,
    RealReal,
}

impl PairLabel {
    pub fn as_f64(self) -> f64 {
        u8::from(self) as f64
    }

    pub fn is_real(self) -> bool {
        self == PairLabel::RealReal
    }
}

impl From<PairLabel> for u8 {
    fn from(label: PairLabel) -> u8 {
        match label {
            PairLabel::FakeReal => 0,
            PairLabel::RealReal => 1,
        }
    }
}

impl TryFrom<u8> for PairLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(PairLabel::FakeReal),
            1 => Ok(PairLabel::RealReal),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Technique tag carried by real-real pairs.
pub const GENUINE_TECHNIQUE: &str = "genuine";

/// One reference/suspicious image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub real_path: String,
    pub suspicious_path: String,
    pub label: PairLabel,
    pub technique: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scenario: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Fields this version does not know about, kept for round trips.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
}

/// Ordered pair records plus split assignment.
///
/// Relative image paths are resolved against `base_dir`, the directory the
/// manifest was loaded from or saved to.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub records: Vec<PairRecord>,
    pub split_seed: Option<u64>,
    /// Fingerprint of the settings that generated the dataset, if known.
    pub fingerprint: Option<String>,
    pub base_dir: PathBuf,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.split_seed == other.split_seed && self.fingerprint == other.fingerprint
    }
}

impl DatasetManifest {
    pub fn new(records: Vec<PairRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            records,
            split_seed: None,
            fingerprint: None,
            base_dir: base_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn real_path(&self, record: &PairRecord) -> PathBuf {
        self.resolve(&record.real_path)
    }

    pub fn suspicious_path(&self, record: &PairRecord) -> PathBuf {
        self.resolve(&record.suspicious_path)
    }

    pub fn split(&self, split: Split) -> Vec<&PairRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    /// Records matching `split`, or every record when none are assigned.
    pub fn split_or_all(&self, split: Split) -> Vec<&PairRecord> {
        if self.records.iter().all(|r| r.split.is_none()) {
            self.records.iter().collect()
        } else {
            self.split(split)
        }
    }

    /// Checks that both images of every record exist on disk.
    pub fn validate_paths(&self) -> Result<()> {
        for r in &self.records {
            for path in [self.real_path(r), self.suspicious_path(r)] {
                if !path.is_file() {
                    return Err(Error::Input(format!(
                        "pair {}: image {} does not exist",
                        r.pair_id,
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct technique tags of fake-real records, sorted.
    pub fn fake_techniques<'a>(records: impl IntoIterator<Item = &'a PairRecord>) -> Vec<String> {
        let mut t: Vec<String> = records
            .into_iter()
            .filter(|r| !r.label.is_real())
            .map(|r| r.technique.clone())
            .collect();
        t.sort();
        t.dedup();
        t
    }
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    if manifest.split_seed.is_some() || manifest.fingerprint.is_some() {
        let header = ManifestHeader {
            kind: "header".into(),
            split_seed: manifest.split_seed,
            fingerprint: manifest.fingerprint.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
    }
    for record in &manifest.records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut manifest = DatasetManifest::new(
        Vec::new(),
        path.parent().map(Path::to_path_buf).unwrap_or_default(),
    );
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
        if value.get("pair_id").is_none() && value.get("kind").and_then(Value::as_str) == Some("header") {
            let header: ManifestHeader = serde_json::from_value(value).map_err(|e| err(line_no, e.to_string()))?;
            manifest.split_seed = header.split_seed;
            manifest.fingerprint = header.fingerprint;
            continue;
        }
        let record: PairRecord = serde_json::from_value(value).map_err(|e| err(line_no, e.to_string()))?;
        manifest.records.push(record);
    }
    Ok(manifest)
}

/// Stratified, seed-deterministic train/val split.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    split_dataset_with_holdout(manifest, train_fraction, seed, &[])
}

/// Like [`split_dataset`], but records whose technique is listed in
/// `holdout_techniques` go to the test split instead.
pub fn split_dataset_with_holdout(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
    holdout_techniques: &[String],
) -> Result<DatasetManifest> {
    split_dataset_with_test(manifest, train_fraction, 0.0, seed, holdout_techniques)
}

/// Three-way stratified split: per label, `test_fraction` of the records
/// (after removing held-out techniques) go to test, and the rest is divided
/// train/val by `train_fraction`.
pub fn split_dataset_with_test(
    manifest: &DatasetManifest,
    train_fraction: f64,
    test_fraction: f64,
    seed: u64,
    holdout_techniques: &[String],
) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    if manifest.is_empty() {
        return Err(Error::Validation("cannot split an empty manifest".into()));
    }
    let mut out = manifest.clone();
    out.split_seed = Some(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [PairLabel::RealReal, PairLabel::FakeReal] {
        let mut idx: Vec<usize> = Vec::new();
        for (i, r) in out.records.iter_mut().enumerate() {
            if r.label != label {
                continue;
            }
            if holdout_techniques.contains(&r.technique) {
                r.split = Some(Split::Test);
            } else {
                idx.push(i);
            }
        }
        idx.shuffle(&mut rng);
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        let n_train = (train_fraction * (idx.len() - n_test) as f64).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            out.records[i].split = Some(if k < n_test {
                Split::Test
            } else if k < n_test + n_train {
                Split::Train
            } else {
                Split::Val
            });
        }
    }
    Ok(out)
}
