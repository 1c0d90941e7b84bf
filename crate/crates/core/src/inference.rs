//! Zero-shot prediction over arbitrary label spaces.
//!
//! Scores are `sigmoid(M)` where `M = t . l / tau` for the projected text and
//! each projected label. Multi-label decisions use a strict `score > t` rule
//! everywhere, so a threshold of 1.0 never fires.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::sigmoid;
use crate::corpus::{normalize_label, LabelSpace, DIMENSIONAL_DESCRIPTORS};
use crate::evaluation::f1_from_counts;
use crate::model::{EmotionModel, ModelError};

pub const GRID_STEPS: usize = 20;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no threshold for label {0:?}")]
    MissingThreshold(String),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("threshold {value} for {label:?} is not on the 0.05 grid in [0, 1]")]
    OffGrid { label: String, value: f64 },
}

/// `{0.00, 0.05, ..., 1.00}`, each value computed as `k / 20`.
pub fn threshold_grid() -> [f64; GRID_STEPS + 1] {
    std::array::from_fn(|k| k as f64 / GRID_STEPS as f64)
}

pub fn is_on_grid(t: f64) -> bool {
    (0.0..=1.0).contains(&t) && threshold_grid().contains(&t)
}

/// Projected label matrix for one label space, computed once and reused.
#[derive(Debug, Clone)]
pub struct LabelBank {
    pub space: LabelSpace,
    /// One unit row per label, in label-space order.
    pub matrix: Array2<f64>,
}

impl LabelBank {
    pub fn new(model: &EmotionModel, space: &LabelSpace) -> Result<Self, ModelError> {
        Ok(LabelBank {
            space: space.clone(),
            matrix: model.embed_labels(space.labels())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub label_space: String,
    pub labels: Vec<String>,
    /// Raw alignment values `M[text, label]`.
    pub alignment: Vec<f64>,
    /// `sigmoid(alignment)`.
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn from_alignment(label_space: &str, labels: Vec<String>, alignment: Vec<f64>) -> Self {
        let scores = alignment.iter().map(|&m| sigmoid(m)).collect();
        ScoreVector {
            label_space: label_space.to_string(),
            labels,
            alignment,
            scores,
        }
    }

    /// Builds a vector directly from probabilities (alignment left as the
    /// logit).
    pub fn from_scores(label_space: &str, labels: Vec<String>, scores: Vec<f64>) -> Self {
        let alignment = scores.iter().map(|&p: &f64| (p / (1.0 - p)).ln()).collect();
        ScoreVector {
            label_space: label_space.to_string(),
            labels,
            alignment,
            scores,
        }
    }

    pub fn score(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.scores[i])
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.labels.iter().cloned().zip(self.scores.iter().copied()).collect()
    }
}

pub fn score_with_bank(model: &EmotionModel, bank: &LabelBank, text: &str) -> Result<ScoreVector, ModelError> {
    let t = model.embed_text(text)?;
    let m = bank.matrix.dot(&t) / model.tau();
    Ok(ScoreVector::from_alignment(
        bank.space.name(),
        bank.space.labels().to_vec(),
        m.to_vec(),
    ))
}

pub fn score_labels(text: &str, space: &LabelSpace, model: &EmotionModel) -> Result<ScoreVector, ModelError> {
    score_with_bank(model, &LabelBank::new(model, space)?, text)
}

/// Scores many texts in parallel; output order follows `texts`.
pub fn score_batch<S: AsRef<str> + Sync>(
    model: &EmotionModel,
    bank: &LabelBank,
    texts: &[S],
) -> Result<Vec<ScoreVector>, ModelError> {
    texts
        .par_iter()
        .map(|t| score_with_bank(model, bank, t.as_ref()))
        .collect()
}

/// Argmax; the earliest label in space order wins exact ties.
pub fn predict_single(scores: &ScoreVector) -> &str {
    let mut best = 0;
    for (i, &s) in scores.scores.iter().enumerate() {
        if s > scores.scores[best] {
            best = i;
        }
    }
    &scores.labels[best]
}

/// Per-label decision thresholds. Persisted as a bare `{label: threshold}`
/// JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct ThresholdTable {
    thresholds: BTreeMap<String, f64>,
}

impl TryFrom<BTreeMap<String, f64>> for ThresholdTable {
    type Error = InferenceError;

    fn try_from(map: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        ThresholdTable::new(map)
    }
}

impl From<ThresholdTable> for BTreeMap<String, f64> {
    fn from(t: ThresholdTable) -> Self {
        t.thresholds
    }
}

impl ThresholdTable {
    /// Labels are normalized; every value must lie on the grid.
    pub fn new(map: BTreeMap<String, f64>) -> Result<Self, InferenceError> {
        let mut thresholds = BTreeMap::new();
        for (label, value) in map {
            if !is_on_grid(value) {
                return Err(InferenceError::OffGrid { label, value });
            }
            thresholds.insert(normalize_label(&label), value);
        }
        Ok(ThresholdTable { thresholds })
    }

    /// The same threshold for every label of `space`.
    pub fn uniform(space: &LabelSpace, value: f64) -> Result<Self, InferenceError> {
        ThresholdTable::new(space.labels().iter().map(|l| (l.clone(), value)).collect())
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.thresholds.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.thresholds.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// Best grid threshold for one label and its F1. Ties keep the lowest
/// threshold; a best F1 of zero yields 1.0.
pub fn calibrate_label(scores: &[f64], gold: &[bool]) -> (f64, f64) {
    let mut best_t = 1.0;
    let mut best_f1 = 0.0;
    for t in threshold_grid() {
        let f1 = f1_at(scores, gold, t);
        if f1 > best_f1 {
            best_f1 = f1;
            best_t = t;
        }
    }
    (best_t, best_f1)
}

/// Binary F1 of the rule `score > t`.
pub fn f1_at(scores: &[f64], gold: &[bool], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &g) in scores.iter().zip(gold) {
        match (s > t, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

pub fn calibrate_thresholds(
    val_scores: &[ScoreVector],
    val_gold: &[BTreeSet<String>],
) -> Result<ThresholdTable, InferenceError> {
    if val_scores.is_empty() {
        return Err(InferenceError::EmptyValidation);
    }
    if val_scores.len() != val_gold.len() {
        return Err(InferenceError::LengthMismatch(format!(
            "{} score vectors vs {} gold sets",
            val_scores.len(),
            val_gold.len()
        )));
    }
    let labels = &val_scores[0].labels;
    let mut map = BTreeMap::new();
    for (j, label) in labels.iter().enumerate() {
        let scores: Vec<f64> = val_scores.iter().map(|s| s.scores[j]).collect();
        let gold: Vec<bool> = val_gold.iter().map(|g| g.contains(label)).collect();
        map.insert(label.clone(), calibrate_label(&scores, &gold).0);
    }
    ThresholdTable::new(map)
}

/// Scores `samples` against `space` and calibrates on their gold sets.
pub fn calibrate_for_space(
    model: &EmotionModel,
    space: &LabelSpace,
    samples: &[crate::corpus::TextSample],
) -> Result<ThresholdTable, InferenceError> {
    let bank = LabelBank::new(model, space)?;
    let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    let scores = score_batch(model, &bank, &texts)?;
    let gold: Vec<BTreeSet<String>> = samples.iter().map(|s| s.gold_set()).collect();
    calibrate_thresholds(&scores, &gold)
}

/// Labels whose score strictly exceeds their threshold, in space order.
/// May be empty.
pub fn predict_multi(scores: &ScoreVector, thresholds: &ThresholdTable) -> Result<Vec<String>, InferenceError> {
    let mut out = Vec::new();
    for (label, &s) in scores.labels.iter().zip(&scores.scores) {
        let t = thresholds
            .get(label)
            .ok_or_else(|| InferenceError::MissingThreshold(label.clone()))?;
        if s > t {
            out.push(label.clone());
        }
    }
    Ok(out)
}

/// Valence and activation from raw alignment values in
/// [`DIMENSIONAL_DESCRIPTORS`] order.
pub fn valence_activation_from_alignment(m: [f64; 4]) -> (f64, f64) {
    (m[0] - m[1], m[2] - m[3])
}

/// Pre-computed projections of the four regression descriptors.
#[derive(Debug, Clone)]
pub struct DimensionalHead {
    matrix: Array2<f64>,
    tau: f64,
}

impl DimensionalHead {
    pub fn new(model: &EmotionModel) -> Result<Self, ModelError> {
        Self::with_descriptors(model, DIMENSIONAL_DESCRIPTORS)
    }

    /// Descriptor order: positive, negative, high activation, low
    /// activation.
    pub fn with_descriptors(model: &EmotionModel, descriptors: [&str; 4]) -> Result<Self, ModelError> {
        Ok(DimensionalHead {
            matrix: model.embed_labels(&descriptors)?,
            tau: model.tau(),
        })
    }

    pub fn predict_from_embedding(&self, t: &Array1<f64>) -> (f64, f64) {
        let m = self.matrix.dot(t) / self.tau;
        valence_activation_from_alignment([m[0], m[1], m[2], m[3]])
    }

    pub fn predict(&self, model: &EmotionModel, text: &str) -> Result<(f64, f64), ModelError> {
        Ok(self.predict_from_embedding(&model.embed_text(text)?))
    }
}

pub fn predict_valence_activation(text: &str, model: &EmotionModel) -> Result<(f64, f64), ModelError> {
    DimensionalHead::new(model)?.predict(model, text)
}
