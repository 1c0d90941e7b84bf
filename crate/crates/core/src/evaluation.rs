//! Metrics, dataset-level evaluation and the nearest-neighbour probe.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_label, DescriptorAnnotation, LabelSpace, LabelSpaceKind, TextSample};
use crate::inference::{
    predict_multi, predict_single, score_with_bank, DimensionalHead, InferenceError, LabelBank, ThresholdTable,
};
use crate::model::{EmotionModel, ModelError};
use crate::provenance::Provenance;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("multi-label evaluation requires thresholds")]
    MissingThresholds,
    #[error("invalid value: {0}")]
    Value(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Binary F1 from counts; 0 when precision + recall is 0.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_metrics(
    predictions: &[BTreeSet<String>],
    golds: &[BTreeSet<String>],
    labels: &[String],
) -> Result<Vec<ClassMetrics>, EvalError> {
    check_lengths(predictions.len(), golds.len())?;
    Ok(labels
        .iter()
        .map(|label| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (p, g) in predictions.iter().zip(golds) {
                match (p.contains(label), g.contains(label)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            ClassMetrics {
                label: label.clone(),
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: f1_from_counts(tp, fp, fn_),
                support: tp + fn_,
            }
        })
        .collect())
}

/// Unweighted mean of per-class F1 over every label of the space.
pub fn macro_f1(
    predictions: &[BTreeSet<String>],
    golds: &[BTreeSet<String>],
    space: &LabelSpace,
) -> Result<f64, EvalError> {
    let per = per_class_metrics(predictions, golds, space.labels())?;
    Ok(per.iter().map(|c| c.f1).sum::<f64>() / per.len() as f64)
}

/// F1 over pooled counts of all (sample, class) pairs of the space.
pub fn micro_f1(
    predictions: &[BTreeSet<String>],
    golds: &[BTreeSet<String>],
    space: &LabelSpace,
) -> Result<f64, EvalError> {
    check_lengths(predictions.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in predictions.iter().zip(golds) {
        for label in space.labels() {
            match (p.contains(label), g.contains(label)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

fn check_pair(pred: &[f64], gold: &[f64]) -> Result<(), EvalError> {
    check_lengths(pred.len(), gold.len())?;
    if pred.len() < 2 {
        return Err(EvalError::DegenerateInput("need at least two points".into()));
    }
    if pred.iter().chain(gold).any(|x| !x.is_finite()) {
        return Err(EvalError::DegenerateInput("non-finite value".into()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(pred: &[f64], gold: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, gold)?;
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = gold.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in pred.iter().zip(gold) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateInput("constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, gold)?;
    pearson(&average_ranks(pred), &average_ranks(gold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub seen_macro_f1: Option<f64>,
    /// Absent when every class of the space was seen.
    pub unseen_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub label_space: String,
    pub kind: LabelSpaceKind,
    pub n_samples: usize,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: Option<f64>,
    pub micro_f1: Option<f64>,
    pub correlations: Option<BTreeMap<String, Correlation>>,
    pub breakdown: Option<ClassBreakdown>,
    pub provenance: Provenance,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    /// Aligned plain-text rendering.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dataset: {}  label space: {} ({})  samples: {}",
            self.dataset, self.label_space, self.kind, self.n_samples
        );
        if !self.per_class.is_empty() {
            let w = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
            let _ = writeln!(out, "{:<w$}  {:>9}  {:>6}  {:>6}  {:>7}", "label", "precision", "recall", "f1", "support");
            for c in &self.per_class {
                let _ = writeln!(
                    out,
                    "{:<w$}  {:>9.4}  {:>6.4}  {:>6.4}  {:>7}",
                    c.label, c.precision, c.recall, c.f1, c.support
                );
            }
        }
        let _ = writeln!(out, "macro-F1: {}  micro-F1: {}", fmt_opt(self.macro_f1), fmt_opt(self.micro_f1));
        if let Some(b) = &self.breakdown {
            let _ = writeln!(
                out,
                "seen macro-F1: {} ({} classes)  unseen macro-F1: {} ({} classes)",
                fmt_opt(b.seen_macro_f1),
                b.seen_classes.len(),
                fmt_opt(b.unseen_macro_f1),
                b.unseen_classes.len()
            );
        }
        if let Some(c) = &self.correlations {
            let _ = writeln!(out, "{:<12}  {:>8}  {:>8}", "dimension", "pearson", "spearman");
            for (dim, v) in c {
                let _ = writeln!(out, "{:<12}  {:>8.4}  {:>8.4}", dim, v.pearson, v.spearman);
            }
        }
        out
    }
}

fn mean_f1_over(per: &[ClassMetrics], classes: &[String]) -> Option<f64> {
    if classes.is_empty() {
        return None;
    }
    let set: HashSet<&str> = classes.iter().map(String::as_str).collect();
    let f: Vec<f64> = per.iter().filter(|c| set.contains(c.label.as_str())).map(|c| c.f1).collect();
    Some(f.iter().sum::<f64>() / f.len() as f64)
}

/// Gold key for a regression dimension; `arousal` is accepted for
/// activation.
fn dimension_gold(sample: &TextSample, dim: &str) -> Option<f64> {
    let scores = sample.gold_dimensional.as_ref()?;
    let alias = if dim == "activation" { Some("arousal") } else { None };
    scores
        .get(dim)
        .or_else(|| alias.and_then(|a| scores.get(a)))
        .copied()
}

/// Runs the inference head matching the label space over `dataset` and
/// scores it against gold.
pub fn evaluate(
    dataset_name: &str,
    dataset: &[TextSample],
    model: &EmotionModel,
    space: &LabelSpace,
    thresholds: Option<&ThresholdTable>,
    seen_classes: Option<&[String]>,
    provenance: Provenance,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Value("empty dataset".into()));
    }
    let kind = space.kind();
    for s in dataset {
        let ok = match kind {
            LabelSpaceKind::Single => s.gold_categorical.as_ref().is_some_and(|g| g.len() == 1),
            LabelSpaceKind::Multi => s.gold_categorical.is_some(),
            LabelSpaceKind::Dimensional => s.gold_dimensional.is_some(),
        };
        if !ok {
            return Err(EvalError::KindMismatch(format!(
                "sample {} has no gold compatible with a {kind} label space",
                s.id
            )));
        }
    }
    match (kind, thresholds) {
        (LabelSpaceKind::Multi, None) => return Err(EvalError::MissingThresholds),
        (LabelSpaceKind::Single | LabelSpaceKind::Dimensional, Some(_)) => {
            return Err(EvalError::KindMismatch(format!("thresholds given for a {kind} label space")))
        }
        _ => {}
    }

    if kind == LabelSpaceKind::Dimensional {
        let head = DimensionalHead::new(model)?;
        let preds: Vec<(f64, f64)> = dataset
            .par_iter()
            .map(|s| head.predict(model, &s.text))
            .collect::<Result<_, _>>()?;
        let mut correlations = BTreeMap::new();
        for (dim, pick) in [("valence", 0usize), ("activation", 1)] {
            let pairs: Vec<(f64, f64)> = dataset
                .iter()
                .zip(&preds)
                .filter_map(|(s, p)| dimension_gold(s, dim).map(|g| (if pick == 0 { p.0 } else { p.1 }, g)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let (p, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            correlations.insert(
                dim.to_string(),
                Correlation {
                    pearson: pearson(&p, &g)?,
                    spearman: spearman(&p, &g)?,
                },
            );
        }
        return Ok(EvalReport {
            dataset: dataset_name.to_string(),
            label_space: space.name().to_string(),
            kind,
            n_samples: dataset.len(),
            per_class: Vec::new(),
            macro_f1: None,
            micro_f1: None,
            correlations: Some(correlations),
            breakdown: None,
            provenance,
        });
    }

    let bank = LabelBank::new(model, space)?;
    let predictions: Vec<BTreeSet<String>> = dataset
        .par_iter()
        .map(|s| -> Result<BTreeSet<String>, EvalError> {
            let scores = score_with_bank(model, &bank, &s.text)?;
            Ok(match thresholds {
                Some(t) => predict_multi(&scores, t)?.into_iter().collect(),
                None => BTreeSet::from([predict_single(&scores).to_string()]),
            })
        })
        .collect::<Result<_, _>>()?;
    let golds: Vec<BTreeSet<String>> = dataset.iter().map(|s| s.gold_set()).collect();
    let per_class = per_class_metrics(&predictions, &golds, space.labels())?;
    let macro_ = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    let micro = micro_f1(&predictions, &golds, space)?;

    let breakdown = seen_classes.map(|seen| {
        let seen_set: HashSet<String> = seen.iter().map(|s| normalize_label(s)).collect();
        let (seen_classes, unseen_classes): (Vec<String>, Vec<String>) =
            space.labels().iter().cloned().partition(|l| seen_set.contains(l));
        ClassBreakdown {
            seen_macro_f1: mean_f1_over(&per_class, &seen_classes),
            unseen_macro_f1: mean_f1_over(&per_class, &unseen_classes),
            seen_classes,
            unseen_classes,
        }
    });

    Ok(EvalReport {
        dataset: dataset_name.to_string(),
        label_space: space.name().to_string(),
        kind,
        n_samples: dataset.len(),
        per_class,
        macro_f1: Some(macro_),
        micro_f1: Some(micro),
        correlations: None,
        breakdown,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub term: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRow {
    pub target: String,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub k: usize,
    pub rows: Vec<NeighborRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl NeighborTable {
    pub fn render_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.target.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$}  top-{} neighbours", "target", self.k);
        for r in &self.rows {
            let cells: Vec<String> = r
                .neighbors
                .iter()
                .map(|n| format!("{} ({:.3})", n.term, n.similarity))
                .collect();
            let _ = writeln!(out, "{:<w$}  {}", r.target, cells.join(", "));
        }
        out
    }
}

/// Exact top-k by cosine over already-embedded unit vectors. Pool entries
/// whose normalized string equals the target are skipped; equal
/// similarities keep pool order.
pub fn nearest_neighbors_from_vectors(
    targets: &[(String, Array1<f64>)],
    pool: &[(String, Array1<f64>)],
    k: usize,
) -> Result<NeighborTable, EvalError> {
    if pool.is_empty() {
        return Err(EvalError::Value("empty candidate pool".into()));
    }
    if k > pool.len() {
        return Err(EvalError::Value(format!("k = {k} exceeds pool size {}", pool.len())));
    }
    let pool_norm: Vec<String> = pool.iter().map(|(p, _)| normalize_label(p)).collect();
    let rows = targets
        .par_iter()
        .map(|(target, tv)| {
            let tn = normalize_label(target);
            let mut cands: Vec<(usize, f64)> = pool
                .iter()
                .enumerate()
                .filter(|(i, _)| pool_norm[*i] != tn)
                .map(|(i, (_, pv))| (i, tv.dot(pv)))
                .collect();
            cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            NeighborRow {
                target: target.clone(),
                neighbors: cands
                    .into_iter()
                    .take(k)
                    .map(|(i, similarity)| Neighbor {
                        term: pool[i].0.clone(),
                        similarity,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(NeighborTable {
        k,
        rows,
        provenance: None,
    })
}

/// Embeds targets and pool through the frozen label encoder and the label
/// projector, then runs the exact search.
pub fn nearest_neighbors(
    targets: &[String],
    pool: &[String],
    k: usize,
    model: &EmotionModel,
) -> Result<NeighborTable, EvalError> {
    if pool.is_empty() {
        return Err(EvalError::Value("empty candidate pool".into()));
    }
    if k > pool.len() {
        return Err(EvalError::Value(format!("k = {k} exceeds pool size {}", pool.len())));
    }
    let embed = |xs: &[String]| -> Result<Vec<(String, Array1<f64>)>, ModelError> {
        xs.par_iter().map(|x| Ok((x.clone(), model.embed_label(x)?))).collect()
    };
    nearest_neighbors_from_vectors(&embed(targets)?, &embed(pool)?, k)
}

/// Deduplicated descriptor pool from the annotations of the given samples
/// (normally the test split), in first-occurrence order.
pub fn build_probe_pool(annotations: &[DescriptorAnnotation], sample_ids: &[String]) -> Vec<String> {
    let wanted: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    annotations
        .iter()
        .filter(|a| wanted.contains(a.sample_id.as_str()))
        .flat_map(|a| a.descriptors().iter())
        .filter(|d| seen.insert(normalize_label(d)))
        .cloned()
        .collect()
}
