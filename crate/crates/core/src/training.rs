//! Batch assembly, the optimization loop, best-checkpoint selection and the
//! dimension ablation runner.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{
    alignment_matrix, contrastive_sigmoid_loss, default_tau, loss_gradient, AlignmentError, ProjectorConfig,
    QueryProjectorCache,
};
use crate::corpus::{reserve_validation, CorpusError, DescriptorAnnotation, LabelSpace, LabelSpaceKind, TextSample};
use crate::embedding::{EncoderCache, EncoderConfig, Parameters, TokenStates, Vocabulary};
use crate::evaluation::{evaluate, micro_f1, EvalError};
use crate::inference::{calibrate_for_space, score_batch, InferenceError, LabelBank};
use crate::model::{EmotionModel, ModelError, TrainableWeights};
use crate::provenance::{config_hash, Provenance};

/// Samples per gradient-accumulation chunk. Chunks are reduced in order, so
/// results do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("no annotation for sample(s): {}", .0.join(", "))]
    Coverage(Vec<String>),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("label encoder changed during training")]
    FrozenViolation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Ordered unique labels of a batch (first occurrence wins) and the
/// `B x N` membership matrix.
pub fn collect_batch_labels<S: AsRef<str>>(batch: &[&[S]]) -> Result<(Vec<String>, Array2<bool>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for descriptors in batch {
        for d in descriptors.iter() {
            let d = d.as_ref();
            if !index.contains_key(d) {
                index.insert(d.to_string(), labels.len());
                labels.push(d.to_string());
            }
        }
    }
    let mut y = Array2::from_elem((batch.len(), labels.len()), false);
    for (i, descriptors) in batch.iter().enumerate() {
        for d in descriptors.iter() {
            y[[i, index[d.as_ref()]]] = true;
        }
    }
    Ok((labels, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMetric {
    #[serde(rename = "val_micro_f1_at_0.5")]
    ValMicroF1At05,
    #[serde(rename = "val_loss")]
    ValLoss,
}

impl SelectionMetric {
    fn better(self, candidate: f64, best: f64) -> bool {
        match self {
            SelectionMetric::ValMicroF1At05 => candidate > best,
            SelectionMetric::ValLoss => candidate < best,
        }
    }

    fn worst(self) -> f64 {
        match self {
            SelectionMetric::ValMicroF1At05 => f64::NEG_INFINITY,
            SelectionMetric::ValLoss => f64::INFINITY,
        }
    }
}

impl Default for SelectionMetric {
    fn default() -> Self {
        SelectionMetric::ValMicroF1At05
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub ffn_width: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            hidden: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 64,
            ffn_width: 128,
        }
    }
}

fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    1e-3
}
fn default_d() -> usize {
    32
}
fn default_val_fraction() -> f64 {
    0.2
}
fn default_n_queries() -> usize {
    8
}
fn default_projector_heads() -> usize {
    4
}
fn default_checkpoint_dir() -> PathBuf {
    PathBuf::from("checkpoints")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub selection_metric: SelectionMetric,
    #[serde(default = "default_checkpoint_dir")]
    pub checkpoint_dir: PathBuf,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default = "default_n_queries")]
    pub n_queries: usize,
    #[serde(default = "default_projector_heads")]
    pub projector_heads: usize,
    /// Phrases added to the vocabulary so that label strings used only at
    /// inference are not out-of-vocabulary.
    #[serde(default)]
    pub extra_vocab: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        self.projector_config().validate()?;
        self.encoder_config(1).validate().map_err(ModelError::from)?;
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.encoder.hidden,
            n_layers: self.encoder.n_layers,
            n_heads: self.encoder.n_heads,
            max_len: self.encoder.max_len,
            ffn_width: self.encoder.ffn_width,
            seed: self.seed,
        }
    }

    pub fn projector_config(&self) -> ProjectorConfig {
        ProjectorConfig {
            d: self.d,
            n_queries: self.n_queries,
            n_heads: self.projector_heads,
            tau: self.tau,
            seed: self.seed.wrapping_add(1),
        }
    }

    /// Hash of every setting except the checkpoint location, so the same
    /// experiment run in two directories hashes identically.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.checkpoint_dir = PathBuf::new();
        config_hash(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss with the initial weights, over the first epoch's
    /// batches.
    pub initial_train_loss: f64,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_val_metric: Vec<f64>,
    pub selection_metric: SelectionMetric,
    /// 1-based.
    pub selected_epoch: usize,
    pub checkpoint_path: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
    pub label_encoder_checksum: String,
    pub seed: u64,
    pub provenance: Provenance,
}

pub struct Trained {
    pub model: EmotionModel,
    pub report: TrainReport,
    /// The reserved validation samples.
    pub validation: Vec<TextSample>,
}

/// First and second moment estimates over the flat parameter vector.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut offset = 0;
        for (p, g) in params.params_mut().into_iter().zip(grads.params()) {
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            for (((x, &gi), mi), vi) in p.iter_mut().zip(g).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
            offset += p.len();
        }
    }
}

/// A training example: token ids plus its descriptor list.
pub struct Example<'a> {
    pub ids: Vec<usize>,
    pub descriptors: &'a [String],
}

struct TextForward {
    states: TokenStates,
    encoder: EncoderCache,
    projector: QueryProjectorCache,
}

/// Loss of one batch and, if requested, the gradient of every trainable
/// parameter. `label_vectors` holds the frozen label-encoder output for each
/// descriptor.
pub fn batch_loss_and_grad(
    model: &EmotionModel,
    label_vectors: &HashMap<String, Array1<f64>>,
    batch: &[&Example],
    with_grad: bool,
) -> Result<(f64, Option<TrainableWeights>), TrainError> {
    let lists: Vec<&[String]> = batch.iter().map(|e| e.descriptors).collect();
    let (labels, y) = collect_batch_labels(&lists)?;
    let w = &model.weights;
    let d = model.dim();
    let tau = model.tau();

    let mut label_units = Array2::zeros((labels.len(), d));
    let mut label_norms = Vec::with_capacity(labels.len());
    for (j, l) in labels.iter().enumerate() {
        let (unit, norm) = w.label_projector.forward(&label_vectors[l].view())?;
        label_units.row_mut(j).assign(&unit);
        label_norms.push(norm);
    }

    let forwards: Vec<TextForward> = batch
        .par_iter()
        .map(|e| -> Result<TextForward, TrainError> {
            let mask = vec![true; e.ids.len()];
            let (states, encoder) = w.text_encoder.forward(&e.ids, &mask).map_err(ModelError::from)?;
            let projector = w.text_projector.forward(&states)?;
            Ok(TextForward {
                states,
                encoder,
                projector,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut t = Array2::zeros((batch.len(), d));
    for (i, f) in forwards.iter().enumerate() {
        t.row_mut(i).assign(&f.projector.unit);
    }

    let m = alignment_matrix(&t.view(), &label_units.view(), tau)?;
    let loss = contrastive_sigmoid_loss(&m.view(), &y.view())?;
    if !with_grad {
        return Ok((loss, None));
    }

    let dm = loss_gradient(&m.view(), &y.view())?;
    let dt = dm.dot(&label_units) / tau;
    let dl = dm.t().dot(&t) / tau;

    let partials: Vec<TrainableWeights> = forwards
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = TrainableWeights {
                text_encoder: w.text_encoder.zeros_like(),
                text_projector: w.text_projector.zeros_like(),
                label_projector: w.label_projector.zeros_like(),
            };
            for (k, f) in chunk.iter().enumerate() {
                let i = c * GRAD_CHUNK + k;
                let dstates =
                    w.text_projector
                        .backward(&f.states, &f.projector, &dt.row(i), &mut g.text_projector);
                w.text_encoder.backward(&f.encoder, &dstates.view(), &mut g.text_encoder);
            }
            g
        })
        .collect();
    let mut grad = w.zeros_like();
    for p in &partials {
        grad.add_assign_params(p);
    }
    for (j, l) in labels.iter().enumerate() {
        w.label_projector.backward(
            &label_vectors[l].view(),
            &label_units.row(j),
            label_norms[j],
            &dl.row(j),
            &mut grad.label_projector,
        );
    }
    Ok((loss, Some(grad)))
}

/// Frozen label-encoder outputs for every descriptor in `examples`.
pub fn label_vectors_for(
    model: &EmotionModel,
    examples: &[Example],
) -> Result<HashMap<String, Array1<f64>>, TrainError> {
    let unique: BTreeSet<&String> = examples.iter().flat_map(|e| e.descriptors.iter()).collect();
    let unique: Vec<&String> = unique.into_iter().collect();
    let vectors: Vec<Array1<f64>> = unique
        .par_iter()
        .map(|l| model.encode_label(l))
        .collect::<Result<_, _>>()?;
    Ok(unique.into_iter().cloned().zip(vectors).collect())
}

/// Micro-F1 of `sigmoid(M) > 0.5` against the annotations, over the label
/// set formed by every descriptor in the validation annotations.
pub fn validation_micro_f1(
    model: &EmotionModel,
    samples: &[TextSample],
    annotations: &[&DescriptorAnnotation],
) -> Result<f64, TrainError> {
    let mut labels: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for a in annotations {
        for d in a.descriptors() {
            if seen.insert(d.clone()) {
                labels.push(d.clone());
            }
        }
    }
    let space = LabelSpace::new("validation-descriptors", LabelSpaceKind::Multi, labels)?;
    let bank = LabelBank::new(model, &space)?;
    let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    let scores = score_batch(model, &bank, &texts)?;
    let preds: Vec<BTreeSet<String>> = scores
        .iter()
        .map(|s| {
            s.labels
                .iter()
                .zip(&s.scores)
                .filter(|(_, &p)| p > 0.5)
                .map(|(l, _)| l.clone())
                .collect()
        })
        .collect();
    let golds: Vec<BTreeSet<String>> = annotations
        .iter()
        .map(|a| a.descriptors().iter().cloned().collect())
        .collect();
    Ok(micro_f1(&preds, &golds, &space)?)
}

fn validation_loss(
    model: &EmotionModel,
    label_vectors: &HashMap<String, Array1<f64>>,
    examples: &[Example],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let refs: Vec<&Example> = examples.iter().collect();
    let mut total = 0.0;
    let mut n = 0;
    for chunk in refs.chunks(batch_size) {
        total += batch_loss_and_grad(model, label_vectors, chunk, false)?.0;
        n += 1;
    }
    Ok(total / n as f64)
}

/// Recomputes the configured selection metric for `model` on a validation
/// set.
pub fn validation_metric(
    model: &EmotionModel,
    config: &TrainConfig,
    samples: &[TextSample],
    annotations: &[DescriptorAnnotation],
) -> Result<f64, TrainError> {
    let by_id: HashMap<&str, &DescriptorAnnotation> =
        annotations.iter().map(|a| (a.sample_id.as_str(), a)).collect();
    let anns = covered(samples, &by_id)?;
    match config.selection_metric {
        SelectionMetric::ValMicroF1At05 => validation_micro_f1(model, samples, &anns),
        SelectionMetric::ValLoss => {
            let examples = examples_for(model, samples, &anns);
            let vectors = label_vectors_for(model, &examples)?;
            validation_loss(model, &vectors, &examples, config.batch_size)
        }
    }
}

fn covered<'a>(
    samples: &[TextSample],
    by_id: &HashMap<&str, &'a DescriptorAnnotation>,
) -> Result<Vec<&'a DescriptorAnnotation>, TrainError> {
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| !by_id.contains_key(s.id.as_str()))
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(TrainError::Coverage(missing));
    }
    Ok(samples.iter().map(|s| by_id[s.id.as_str()]).collect())
}

fn examples_for<'a>(
    model: &EmotionModel,
    samples: &[TextSample],
    anns: &[&'a DescriptorAnnotation],
) -> Vec<Example<'a>> {
    samples
        .iter()
        .zip(anns)
        .map(|(s, a)| Example {
            ids: model.vocab.tokenize(&s.text),
            descriptors: a.descriptors(),
        })
        .collect()
}

/// Batches for one epoch: seeded shuffle, then chunks of `batch_size`; a
/// trailing batch of one sample is dropped.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

/// Trains on `dataset` (a reserved share becomes the validation split) and
/// keeps the epoch with the best validation metric, ties going to the
/// earliest.
pub fn train(
    dataset: &[TextSample],
    annotations: &[DescriptorAnnotation],
    config: &TrainConfig,
) -> Result<Trained, TrainError> {
    config.validate()?;
    let by_id: HashMap<&str, &DescriptorAnnotation> =
        annotations.iter().map(|a| (a.sample_id.as_str(), a)).collect();
    covered(dataset, &by_id)?;
    let (train_set, val_set) = reserve_validation(dataset, config.val_fraction, config.seed)?;
    if train_set.len() < 2 {
        return Err(TrainError::Config("fewer than two training samples after reservation".into()));
    }
    let train_anns = covered(&train_set, &by_id)?;
    let val_anns = covered(&val_set, &by_id)?;

    let vocab_sources = dataset
        .iter()
        .map(|s| s.text.as_str())
        .chain(train_anns.iter().chain(&val_anns).flat_map(|a| a.descriptors().iter().map(String::as_str)))
        .chain(config.extra_vocab.iter().map(String::as_str));
    let vocab = Vocabulary::build(vocab_sources);
    let hash = config.hash();
    let mut model = EmotionModel::new(vocab, config.encoder_config(0), config.projector_config())?;
    model.meta.seed = config.seed;
    model.meta.config_hash = hash.clone();
    let frozen = model.label_encoder_checksum();

    let train_examples = examples_for(&model, &train_set, &train_anns);
    let val_examples = examples_for(&model, &val_set, &val_anns);
    let mut label_vectors = label_vectors_for(&model, &train_examples)?;
    if config.selection_metric == SelectionMetric::ValLoss {
        label_vectors.extend(label_vectors_for(&model, &val_examples)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut adam = Adam::new(config.learning_rate, model.weights.num_params());
    let checkpoint_path = config.checkpoint_dir.join("best.json");

    let mut initial_loss = None;
    let mut epoch_train_loss = Vec::with_capacity(config.epochs);
    let mut epoch_val_metric = Vec::with_capacity(config.epochs);
    let mut best = (config.selection_metric.worst(), 0usize);
    let mut best_model = model.clone();

    for epoch in 1..=config.epochs {
        let batches = epoch_batches(train_examples.len(), config.batch_size, &mut rng);
        if initial_loss.is_none() {
            let mut total = 0.0;
            for b in &batches {
                let refs: Vec<&Example> = b.iter().map(|&i| &train_examples[i]).collect();
                total += batch_loss_and_grad(&model, &label_vectors, &refs, false)?.0;
            }
            initial_loss = Some(total / batches.len() as f64);
        }
        let mut total = 0.0;
        for (bi, b) in batches.iter().enumerate() {
            let refs: Vec<&Example> = b.iter().map(|&i| &train_examples[i]).collect();
            let (loss, grad) = batch_loss_and_grad(&model, &label_vectors, &refs, true)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch, batch: bi });
            }
            adam.step(&mut model.weights, &grad.expect("requested"));
            total += loss;
        }
        epoch_train_loss.push(total / batches.len() as f64);

        let metric = match config.selection_metric {
            SelectionMetric::ValMicroF1At05 => validation_micro_f1(&model, &val_set, &val_anns)?,
            SelectionMetric::ValLoss => validation_loss(&model, &label_vectors, &val_examples, config.batch_size)?,
        };
        if !metric.is_finite() && config.selection_metric == SelectionMetric::ValLoss {
            return Err(TrainError::Divergence { epoch, batch: batches.len() });
        }
        epoch_val_metric.push(metric);
        if config.selection_metric.better(metric, best.0) {
            best = (metric, epoch);
            best_model = model.clone();
            best_model.save(&checkpoint_path)?;
        }
    }

    if model.label_encoder_checksum() != frozen || best_model.label_encoder_checksum() != frozen {
        return Err(TrainError::FrozenViolation);
    }
    let report = TrainReport {
        initial_train_loss: initial_loss.expect("at least one epoch"),
        epoch_train_loss,
        epoch_val_metric,
        selection_metric: config.selection_metric,
        selected_epoch: best.1,
        checkpoint_path,
        n_train: train_set.len(),
        n_val: val_set.len(),
        label_encoder_checksum: frozen,
        seed: config.seed,
        provenance: Provenance::new(hash, config.seed),
    };
    Ok(Trained {
        model: best_model,
        report,
        validation: val_set,
    })
}

/// One label space to score in the ablation: thresholds (multi-label) are
/// calibrated on `calibration`, metrics are taken on `test`.
#[derive(Debug, Clone)]
pub struct AblationTarget {
    pub name: String,
    pub space: LabelSpace,
    pub calibration: Vec<TextSample>,
    pub test: Vec<TextSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub target: String,
    pub macro_f1: Option<f64>,
    pub micro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub d: usize,
    pub scores: Vec<TargetScore>,
    /// Selected-epoch validation metric (micro-F1 over descriptor labels by
    /// default).
    pub val_metric: f64,
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub selection_metric: SelectionMetric,
    pub targets: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub provenance: Provenance,
}

impl AblationTable {
    /// One row per dimension, macro-F1 per target, then the validation
    /// metric.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let w = self.targets.iter().map(|t| t.len()).max().unwrap_or(8).max(8);
        let _ = write!(out, "{:>5}", "d");
        for t in &self.targets {
            let _ = write!(out, "  {t:>w$}");
        }
        let _ = writeln!(out, "  {:>10}", "val metric");
        for r in &self.rows {
            let _ = write!(out, "{:>5}", r.d);
            for s in &r.scores {
                let cell = s.macro_f1.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                let _ = write!(out, "  {cell:>w$}");
            }
            let _ = writeln!(out, "  {:>10.4}", r.val_metric);
        }
        out
    }
}

/// Trains one model per `d` with identical data and seed, then scores each
/// target. Checkpoints go to `<checkpoint_dir>/d<d>/`.
pub fn ablate_dimensions(
    dataset: &[TextSample],
    annotations: &[DescriptorAnnotation],
    dims: &[usize],
    config: &TrainConfig,
    targets: &[AblationTarget],
) -> Result<AblationTable, TrainError> {
    if dims.is_empty() {
        return Err(TrainError::Config("no dimensions to ablate".into()));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &d in dims {
        let mut cfg = config.clone();
        cfg.d = d;
        cfg.checkpoint_dir = config.checkpoint_dir.join(format!("d{d}"));
        let trained = train(dataset, annotations, &cfg)?;
        let mut scores = Vec::with_capacity(targets.len());
        for t in targets {
            let thresholds = match t.space.kind() {
                LabelSpaceKind::Multi => Some(calibrate_for_space(&trained.model, &t.space, &t.calibration)?),
                _ => None,
            };
            let report = evaluate(
                &t.name,
                &t.test,
                &trained.model,
                &t.space,
                thresholds.as_ref(),
                None,
                trained.report.provenance.clone(),
            )?;
            scores.push(TargetScore {
                target: t.name.clone(),
                macro_f1: report.macro_f1,
                micro_f1: report.micro_f1,
            });
        }
        let sel = trained.report.selected_epoch;
        rows.push(AblationRow {
            d,
            scores,
            val_metric: trained.report.epoch_val_metric[sel - 1],
            selected_epoch: sel,
        });
    }
    Ok(AblationTable {
        selection_metric: config.selection_metric,
        targets: targets.iter().map(|t| t.name.clone()).collect(),
        rows,
        provenance: Provenance::new(config.hash(), config.seed),
    })
}

/// Sum of per-row positives equals the deduplicated annotation sizes.
pub fn y_row_sums(y: &Array2<bool>) -> Vec<usize> {
    y.axis_iter(Axis(0)).map(|r| r.iter().filter(|&&b| b).count()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, Split, SyntheticSpec};
    use ndarray::array;
    use proptest::prelude::*;

    fn tiny_config(dir: &std::path::Path) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 3,
            learning_rate: 3e-3,
            seed: 7,
            d: 8,
            checkpoint_dir: dir.to_path_buf(),
            encoder: EncoderSettings {
                hidden: 16,
                n_layers: 1,
                n_heads: 2,
                max_len: 32,
                ffn_width: 32,
            },
            n_queries: 2,
            projector_heads: 2,
            ..TrainConfig::default()
        }
    }

    fn small_corpus() -> (Vec<TextSample>, Vec<DescriptorAnnotation>) {
        let c = generate_synthetic_corpus(&SyntheticSpec {
            n_emotions: 4,
            n_train: 160,
            n_val: 0,
            n_test: 0,
            filler_vocab_size: 40,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let train: Vec<TextSample> = c
            .seen_dataset
            .iter()
            .filter(|s| s.split == Some(Split::Train))
            .cloned()
            .collect();
        (train, c.annotations)
    }

    #[test]
    fn batch_label_examples() {
        let b: [&[&str]; 2] = [&["joy", "awe"], &["joy"]];
        let (l, y) = collect_batch_labels(&b).unwrap();
        assert_eq!(l, ["joy", "awe"]);
        assert_eq!(y, array![[true, true], [true, false]]);

        let b: [&[&str]; 3] = [&["a"], &["b"], &["c"]];
        let (l, y) = collect_batch_labels(&b).unwrap();
        assert_eq!(l.len(), 3);
        assert_eq!(y, Array2::from_shape_fn((3, 3), |(i, j)| i == j));

        let b: [&[&str]; 1] = [&["joy", "joy"]];
        let (l, y) = collect_batch_labels(&b).unwrap();
        assert_eq!(l, ["joy"]);
        assert_eq!(y, array![[true]]);

        let empty: [&[&str]; 0] = [];
        assert!(matches!(collect_batch_labels(&empty), Err(TrainError::EmptyBatch)));
    }

    #[test]
    fn config_rejects_single_sample_batches() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 1;
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        assert!(json.contains("\"val_micro_f1_at_0.5\""));
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrainConfig::default());
    }

    #[test]
    fn epoch_batches_drop_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(9, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4]);
        let b = epoch_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
    }

    #[test]
    fn missing_annotation_is_a_coverage_error() {
        let dir = tempfile::tempdir().unwrap();
        let (data, mut anns) = small_corpus();
        let victim = data[5].id.clone();
        anns.retain(|a| a.sample_id != victim);
        match train(&data, &anns, &tiny_config(dir.path())) {
            Err(TrainError::Coverage(ids)) => assert_eq!(ids, [victim]),
            other => panic!("expected coverage error, got {:?}", other.err()),
        }
    }

    #[test]
    fn training_learns_is_deterministic_and_keeps_labels_frozen() {
        let dir = tempfile::tempdir().unwrap();
        let (data, anns) = small_corpus();
        let cfg = tiny_config(dir.path());
        let a = train(&data, &anns, &cfg).unwrap();
        let last = *a.report.epoch_train_loss.last().unwrap();
        assert!(last < a.report.initial_train_loss, "{:?}", a.report);
        assert_eq!(a.model.label_encoder_checksum(), a.report.label_encoder_checksum);

        let dir2 = tempfile::tempdir().unwrap();
        let b = train(&data, &anns, &tiny_config(dir2.path())).unwrap();
        assert_eq!(a.report.epoch_train_loss, b.report.epoch_train_loss);
        assert_eq!(a.report.epoch_val_metric, b.report.epoch_val_metric);

        let best = a.report.epoch_val_metric[a.report.selected_epoch - 1];
        assert!(a.report.epoch_val_metric.iter().all(|&m| m <= best));
        let first_best = a.report.epoch_val_metric.iter().position(|&m| m == best).unwrap() + 1;
        assert_eq!(first_best, a.report.selected_epoch);

        let reloaded = EmotionModel::load(&a.report.checkpoint_path).unwrap();
        let again = validation_metric(&reloaded, &cfg, &a.validation, &anns).unwrap();
        assert_eq!(again, best);
    }

    #[test]
    fn ablation_with_one_dim_has_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let (data, anns) = small_corpus();
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 1;
        let table = ablate_dimensions(&data, &anns, &[16], &cfg, &[]).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].d, 16);
        assert!(table.render_table().lines().count() == 2);
        assert!(matches!(ablate_dimensions(&data, &anns, &[], &cfg, &[]), Err(TrainError::Config(_))));
    }

    proptest! {
        #[test]
        fn y_consistency(batch in prop::collection::vec(prop::collection::vec("[a-e]", 1..5), 1..6)) {
            let refs: Vec<&[String]> = batch.iter().map(Vec::as_slice).collect();
            let (labels, y) = collect_batch_labels(&refs).unwrap();
            let sums = y_row_sums(&y);
            for (row, ann) in sums.iter().zip(&batch) {
                let unique: BTreeSet<&String> = ann.iter().collect();
                prop_assert_eq!(*row, unique.len());
            }
            prop_assert!(labels.len() <= batch.iter().map(Vec::len).sum::<usize>());
            prop_assert_eq!(y.dim(), (batch.len(), labels.len()));
        }
    }
}
