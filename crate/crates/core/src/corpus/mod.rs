//! Dataset records, loaders, split management and descriptor statistics.
//!
//! All label strings pass through [`normalize_label`] before they are compared
//! or stored, so equality between descriptors, gold labels and label-space
//! entries is plain string equality.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::fsio;

pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticEmotion, SyntheticSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("invalid value: {0}")]
    Value(String),
    #[error("empty input")]
    EmptyInput,
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Unicode NFC, lowercase, trim, and collapse internal whitespace runs to a
/// single space.
pub fn normalize_label(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    let lower = nfc.to_lowercase();
    lower.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
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

impl std::str::FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "dev" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::Value(format!("unknown split {other:?}"))),
        }
    }
}

/// One text with optional gold annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub text: String,
    #[serde(rename = "labels", default, skip_serializing_if = "Option::is_none")]
    pub gold_categorical: Option<BTreeSet<String>>,
    #[serde(rename = "scores", default, skip_serializing_if = "Option::is_none")]
    pub gold_dimensional: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl TextSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        TextSample {
            id: id.into(),
            text: text.into(),
            gold_categorical: None,
            gold_dimensional: None,
            split: None,
        }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.gold_categorical = Some(labels.into_iter().map(|l| normalize_label(l.as_ref())).collect());
        self
    }

    pub fn with_scores<I, S>(mut self, scores: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        self.gold_dimensional = Some(
            scores
                .into_iter()
                .map(|(k, v)| (normalize_label(k.as_ref()), v))
                .collect(),
        );
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    /// Gold categorical labels, or the empty set when absent.
    pub fn gold_set(&self) -> BTreeSet<String> {
        self.gold_categorical.clone().unwrap_or_default()
    }
}

/// Ordered, deduplicated, normalized descriptor phrases for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAnnotation")]
pub struct DescriptorAnnotation {
    pub sample_id: String,
    descriptors: Vec<String>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    sample_id: String,
    descriptors: Vec<String>,
}

impl TryFrom<RawAnnotation> for DescriptorAnnotation {
    type Error = CorpusError;

    fn try_from(raw: RawAnnotation) -> Result<Self, Self::Error> {
        DescriptorAnnotation::new(raw.sample_id, raw.descriptors)
    }
}

impl DescriptorAnnotation {
    /// Normalizes every phrase, drops empties and repeated phrases (first
    /// occurrence wins). Fails if nothing remains.
    pub fn new<I, S>(sample_id: impl Into<String>, descriptors: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let descriptors: Vec<String> = descriptors
            .into_iter()
            .map(|d| normalize_label(d.as_ref()))
            .filter(|d| !d.is_empty())
            .filter(|d| seen.insert(d.clone()))
            .collect();
        if descriptors.is_empty() {
            return Err(CorpusError::Value("annotation has no descriptors".into()));
        }
        Ok(DescriptorAnnotation {
            sample_id: sample_id.into(),
            descriptors,
        })
    }

    pub fn descriptors(&self) -> &[String] {
        &self.descriptors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpaceKind {
    Single,
    Multi,
    Dimensional,
}

impl fmt::Display for LabelSpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSpaceKind::Single => "single",
            LabelSpaceKind::Multi => "multi",
            LabelSpaceKind::Dimensional => "dimensional",
        })
    }
}

impl std::str::FromStr for LabelSpaceKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "single" => Ok(LabelSpaceKind::Single),
            "multi" => Ok(LabelSpaceKind::Multi),
            "dimensional" => Ok(LabelSpaceKind::Dimensional),
            other => Err(CorpusError::Value(format!("unknown label-space kind {other:?}"))),
        }
    }
}

/// The descriptor quadruple that stands in for valence/activation axes.
pub const POSITIVITY: &str = "positivity";
pub const NEGATIVITY: &str = "negativity";
pub const HIGH_ACTIVATION: &str = "high activation";
pub const LOW_ACTIVATION: &str = "low activation";
pub const DIMENSIONAL_DESCRIPTORS: [&str; 4] = ["Positivity", "Negativity", "High Activation", "Low Activation"];

/// A fixed, ordered set of label strings used at inference time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace")]
pub struct LabelSpace {
    name: String,
    kind: LabelSpaceKind,
    labels: Vec<String>,
}

#[derive(Deserialize)]
struct RawLabelSpace {
    name: String,
    kind: LabelSpaceKind,
    labels: Vec<String>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = CorpusError;

    fn try_from(raw: RawLabelSpace) -> Result<Self, Self::Error> {
        LabelSpace::new(raw.name, raw.kind, raw.labels)
    }
}

impl LabelSpace {
    pub fn new<I, S>(name: impl Into<String>, kind: LabelSpaceKind, labels: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let labels: Vec<String> = labels.into_iter().map(|l| normalize_label(l.as_ref())).collect();
        if labels.is_empty() {
            return Err(CorpusError::Value("label space is empty".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(CorpusError::Value("empty label in label space".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(CorpusError::Value(format!("duplicate label {l:?} in label space")));
            }
        }
        if kind == LabelSpaceKind::Dimensional {
            let want: BTreeSet<String> = DIMENSIONAL_DESCRIPTORS.iter().map(|s| normalize_label(s)).collect();
            let got: BTreeSet<String> = labels.iter().cloned().collect();
            if want != got {
                return Err(CorpusError::Value(
                    "dimensional label space must be exactly Positivity, Negativity, High Activation, Low Activation"
                        .into(),
                ));
            }
        }
        Ok(LabelSpace {
            name: name.into(),
            kind,
            labels,
        })
    }

    /// The valence/activation descriptor space.
    pub fn dimensional(name: impl Into<String>) -> Self {
        LabelSpace::new(name, LabelSpaceKind::Dimensional, DIMENSIONAL_DESCRIPTORS)
            .expect("built-in dimensional space is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> LabelSpaceKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let norm = normalize_label(label);
        self.labels.iter().position(|l| *l == norm)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    /// `text<TAB>labels<TAB>id`, labels comma-separated (GoEmotions export
    /// layout). Numeric labels are resolved through the optional name list.
    Tsv,
}

#[derive(Deserialize)]
struct RawSample {
    id: Option<String>,
    text: Option<String>,
    labels: Option<Vec<String>>,
    scores: Option<BTreeMap<String, f64>>,
    split: Option<String>,
}

/// Loads and validates a dataset. See [`load_dataset_with_names`] for TSV
/// files whose label column holds numeric ids.
pub fn load_dataset(path: &Path, format: DatasetFormat, kind: LabelSpaceKind) -> Result<Vec<TextSample>, CorpusError> {
    load_dataset_with_names(path, format, kind, None)
}

pub fn load_dataset_with_names(
    path: &Path,
    format: DatasetFormat,
    kind: LabelSpaceKind,
    label_names: Option<&[String]>,
) -> Result<Vec<TextSample>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let raws = match format {
        DatasetFormat::Jsonl => parse_jsonl_samples(&content)?,
        DatasetFormat::Tsv => parse_tsv_samples(&content, label_names)?,
    };
    let mut ids = HashSet::new();
    let mut out = Vec::with_capacity(raws.len());
    for (row, raw) in raws {
        let sample = validate_sample(row, raw, kind)?;
        if !ids.insert(sample.id.clone()) {
            return Err(CorpusError::Schema {
                row,
                message: format!("duplicate id {:?}", sample.id),
            });
        }
        out.push(sample);
    }
    Ok(out)
}

fn parse_jsonl_samples(content: &str) -> Result<Vec<(usize, RawSample)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            row: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, raw));
    }
    Ok(out)
}

fn parse_tsv_samples(content: &str, names: Option<&[String]>) -> Result<Vec<(usize, RawSample)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(CorpusError::Parse {
                row,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let mut labels = Vec::new();
        for piece in cols[1].split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let resolved = match (names, piece.parse::<usize>()) {
                (Some(names), Ok(i)) => names.get(i).cloned().ok_or_else(|| CorpusError::Parse {
                    row,
                    message: format!("label id {i} out of range"),
                })?,
                _ => piece.to_string(),
            };
            labels.push(resolved);
        }
        out.push((
            row,
            RawSample {
                id: Some(cols[2].trim().to_string()),
                text: Some(cols[0].to_string()),
                labels: Some(labels),
                scores: None,
                split: None,
            },
        ));
    }
    Ok(out)
}

fn validate_sample(row: usize, raw: RawSample, kind: LabelSpaceKind) -> Result<TextSample, CorpusError> {
    let id = raw.id.filter(|s| !s.trim().is_empty()).ok_or(CorpusError::Parse {
        row,
        message: "missing id".into(),
    })?;
    let text = raw.text.ok_or(CorpusError::Parse {
        row,
        message: "missing text".into(),
    })?;
    if text.trim().is_empty() {
        return Err(CorpusError::Parse {
            row,
            message: "empty text".into(),
        });
    }
    if raw.labels.is_some() && raw.scores.is_some() {
        return Err(CorpusError::Schema {
            row,
            message: "record carries both categorical labels and dimensional scores".into(),
        });
    }
    let labels: Option<BTreeSet<String>> = raw.labels.map(|ls| {
        ls.iter()
            .map(|l| normalize_label(l))
            .filter(|l| !l.is_empty())
            .collect()
    });
    if kind == LabelSpaceKind::Single {
        if let Some(ls) = &labels {
            if ls.len() != 1 {
                return Err(CorpusError::Schema {
                    row,
                    message: format!("single-label record has {} gold labels", ls.len()),
                });
            }
        }
    }
    let scores = raw
        .scores
        .map(|s| s.into_iter().map(|(k, v)| (normalize_label(&k), v)).collect());
    let split = raw
        .split
        .map(|s| s.parse::<Split>())
        .transpose()
        .map_err(|e| CorpusError::Schema {
            row,
            message: e.to_string(),
        })?;
    Ok(TextSample {
        id,
        text,
        gold_categorical: labels,
        gold_dimensional: scores,
        split,
    })
}

pub fn save_dataset(path: &Path, samples: &[TextSample]) -> Result<(), CorpusError> {
    fsio::write_jsonl(path, samples).map_err(|e| CorpusError::io(path, e))
}

pub fn load_annotations(path: &Path) -> Result<Vec<DescriptorAnnotation>, CorpusError> {
    let rows = fsio::read_jsonl::<DescriptorAnnotation>(path).map_err(|e| CorpusError::io(path, e))?;
    rows.into_iter()
        .map(|r| r.map_err(|(row, message)| CorpusError::Parse { row, message }))
        .collect()
}

pub fn save_annotations(path: &Path, annotations: &[DescriptorAnnotation]) -> Result<(), CorpusError> {
    fsio::write_jsonl(path, annotations).map_err(|e| CorpusError::io(path, e))
}

pub fn load_label_space(path: &Path) -> Result<LabelSpace, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CorpusError::Parse {
        row: e.line(),
        message: e.to_string(),
    })
}

/// Splits off a validation subset of `round(fraction * n)` samples
/// (round-half-up). A seeded permutation decides membership: its tail becomes
/// the validation part. Both parts keep the input order.
pub fn reserve_validation(
    dataset: &[TextSample],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TextSample>, Vec<TextSample>), CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::Value(format!("validation fraction {fraction} outside (0, 1)")));
    }
    if dataset.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let n = dataset.len();
    let n_val = (fraction * n as f64 + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut is_val = vec![false; n];
    for &i in &order[n - n_val..] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = dataset.iter().cloned().zip(is_val).partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        val.into_iter().map(|(s, _)| s).collect(),
    ))
}

/// Descriptive statistics over an annotation set. Standard deviations are
/// population (divide by n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyStats {
    pub unique_terms: usize,
    pub total_terms: usize,
    pub mean_terms_per_sample: f64,
    pub sd_terms_per_sample: f64,
    pub mean_chars_per_term: f64,
    pub sd_chars_per_term: f64,
}

pub fn descriptor_vocabulary_stats(annotations: &[DescriptorAnnotation]) -> Result<VocabularyStats, CorpusError> {
    if annotations.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let per_sample: Vec<f64> = annotations.iter().map(|a| a.descriptors().len() as f64).collect();
    let term_chars: Vec<f64> = annotations
        .iter()
        .flat_map(|a| a.descriptors().iter().map(|d| d.chars().count() as f64))
        .collect();
    let unique: HashSet<&str> = annotations
        .iter()
        .flat_map(|a| a.descriptors().iter().map(String::as_str))
        .collect();
    let (mean_terms, sd_terms) = mean_and_population_sd(&per_sample);
    let (mean_chars, sd_chars) = mean_and_population_sd(&term_chars);
    Ok(VocabularyStats {
        unique_terms: unique.len(),
        total_terms: term_chars.len(),
        mean_terms_per_sample: mean_terms,
        sd_terms_per_sample: sd_terms,
        mean_chars_per_term: mean_chars,
        sd_chars_per_term: sd_chars,
    })
}

fn mean_and_population_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Samples tagged with `split`. Untagged samples are kept only when no
/// sample in the set carries a tag at all.
pub fn filter_split(samples: &[TextSample], split: Split) -> Vec<TextSample> {
    if samples.iter().all(|s| s.split.is_none()) {
        return samples.to_vec();
    }
    samples.iter().filter(|s| s.split == Some(split)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_two_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"id\":\"a\",\"text\":\"hi\",\"labels\":[\" Joy \"]}\n{\"id\":\"b\",\"text\":\"yo\",\"split\":\"test\"}\n",
        );
        let ds = load_dataset(&p, DatasetFormat::Jsonl, LabelSpaceKind::Multi).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].gold_set().into_iter().collect::<Vec<_>>(), vec!["joy"]);
        assert_eq!(ds[1].split, Some(Split::Test));
    }

    #[test]
    fn empty_text_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"id\":\"a\",\"text\":\"\"}\n");
        let err = load_dataset(&p, DatasetFormat::Jsonl, LabelSpaceKind::Multi).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { row: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_row_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n{oops\n");
        let err = load_dataset(&p, DatasetFormat::Jsonl, LabelSpaceKind::Multi).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn single_label_cardinality() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"id\":\"a\",\"text\":\"x\",\"labels\":[\"joy\",\"fear\"]}\n");
        let err = load_dataset(&p, DatasetFormat::Jsonl, LabelSpaceKind::Single).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
        assert!(load_dataset(&p, DatasetFormat::Jsonl, LabelSpaceKind::Multi).is_err());
    }

    #[test]
    fn tsv_with_numeric_label_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.tsv", "I AM CALLING THE POLICE\t27\teew5j0j\nthanks!\t15,27\tx2\n");
        let mut names: Vec<String> = (0..28).map(|i| format!("c{i}")).collect();
        names[15] = "gratitude".into();
        names[27] = "neutral".into();
        let ds = load_dataset_with_names(&p, DatasetFormat::Tsv, LabelSpaceKind::Multi, Some(&names)).unwrap();
        assert_eq!(ds[0].id, "eew5j0j");
        assert!(ds[0].gold_set().contains("neutral"));
        assert_eq!(ds[1].gold_set().len(), 2);
    }

    #[test]
    fn reserve_validation_counts_and_determinism() {
        let ds: Vec<TextSample> = (0..10).map(|i| TextSample::new(format!("s{i}"), "t")).collect();
        let (tr, va) = reserve_validation(&ds, 0.2, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let tr_ids: HashSet<_> = tr.iter().map(|s| &s.id).collect();
        assert!(va.iter().all(|s| !tr_ids.contains(&s.id)));
        let (tr2, va2) = reserve_validation(&ds, 0.2, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert!(reserve_validation(&ds, 1.0, 7).is_err());
        assert!(reserve_validation(&ds, 0.0, 7).is_err());
    }

    #[test]
    fn reserve_rounds_half_up() {
        let ds: Vec<TextSample> = (0..5).map(|i| TextSample::new(format!("s{i}"), "t")).collect();
        // 0.5 * 5 = 2.5 -> 3
        let (_, va) = reserve_validation(&ds, 0.5, 1).unwrap();
        assert_eq!(va.len(), 3);
    }

    #[test]
    fn vocabulary_stats_hand_counts() {
        let a = vec![
            DescriptorAnnotation::new("1", ["joy", "awe"]).unwrap(),
            DescriptorAnnotation::new("2", ["joy"]).unwrap(),
        ];
        let s = descriptor_vocabulary_stats(&a).unwrap();
        assert_eq!(s.unique_terms, 2);
        assert_eq!(s.mean_terms_per_sample, 1.5);
        assert_eq!(s.sd_terms_per_sample, 0.5);
        assert_eq!(s.mean_chars_per_term, 3.0);
        assert_eq!(s.sd_chars_per_term, 0.0);

        let one = descriptor_vocabulary_stats(&[DescriptorAnnotation::new("1", ["neutral"]).unwrap()]).unwrap();
        assert_eq!((one.unique_terms, one.mean_terms_per_sample), (1, 1.0));
        assert!(matches!(descriptor_vocabulary_stats(&[]), Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn label_space_rules() {
        assert!(LabelSpace::new("x", LabelSpaceKind::Multi, ["Joy", "joy "]).is_err());
        let d = LabelSpace::dimensional("emobank");
        assert_eq!(d.labels()[2], "high activation");
        assert!(LabelSpace::new("x", LabelSpaceKind::Dimensional, ["positivity"]).is_err());
        let json = r#"{"name":"s","kind":"single","labels":["Joy","Fear"]}"#;
        let ls: LabelSpace = serde_json::from_str(json).unwrap();
        assert_eq!(ls.labels(), ["joy", "fear"]);
        assert!(serde_json::from_str::<LabelSpace>(r#"{"name":"s","kind":"multi","labels":["a","A"]}"#).is_err());
    }

    #[test]
    fn annotation_normalizes_and_dedupes() {
        let a = DescriptorAnnotation::new("x", ["  Faint   Optimism", "faint optimism", "", "Fear"]).unwrap();
        assert_eq!(a.descriptors(), ["faint optimism", "fear"]);
        assert!(DescriptorAnnotation::new("x", ["  "]).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,24}") {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once.clone());
        }

        #[test]
        fn stats_mean_times_count_is_total(lists in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 1..5), 1..20)) {
            let anns: Vec<_> = lists.iter().enumerate()
                .map(|(i, l)| DescriptorAnnotation::new(i.to_string(), l).unwrap())
                .collect();
            let s = descriptor_vocabulary_stats(&anns).unwrap();
            prop_assert!((s.mean_terms_per_sample * anns.len() as f64 - s.total_terms as f64).abs() < 1e-9);
            prop_assert!(s.unique_terms <= s.total_terms);
        }

        #[test]
        fn reserve_partitions_input(n in 1usize..60, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let ds: Vec<TextSample> = (0..n).map(|i| TextSample::new(format!("s{i}"), "t")).collect();
            let (tr, va) = reserve_validation(&ds, frac, seed).unwrap();
            prop_assert_eq!(tr.len() + va.len(), n);
            prop_assert_eq!(va.len(), (frac * n as f64 + 0.5).floor() as usize);
            let mut ids: Vec<_> = tr.iter().chain(va.iter()).map(|s| s.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }
}
