//! The assembled dual encoder and its checkpoint container.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{AlignmentError, LabelProjector, ProjectorConfig, QueryProjector};
use crate::embedding::{
    parameter_checksum, EmbeddingError, Encoder, EncoderConfig, Parameters, ReferenceEncoder, TextEncoder,
    TokenStates, Vocabulary,
};
use crate::fsio;

pub const CHECKPOINT_FORMAT: &str = "emodistill-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("checkpoint io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Everything the optimizer updates. The label encoder is deliberately not
/// part of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableWeights {
    pub text_encoder: Encoder,
    pub text_projector: QueryProjector,
    pub label_projector: LabelProjector,
}

impl Parameters for TrainableWeights {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.text_encoder.params();
        v.extend(self.text_projector.params());
        v.extend(self.label_projector.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.text_encoder.params_mut();
        v.extend(self.text_projector.params_mut());
        v.extend(self.label_projector.params_mut());
        v
    }
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionModel {
    pub vocab: Vocabulary,
    pub projector_config: ProjectorConfig,
    /// Frozen snapshot of the text encoder's initial weights.
    pub label_encoder: Encoder,
    pub weights: TrainableWeights,
    #[serde(default)]
    pub meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: EmotionModel,
}

impl EmotionModel {
    /// Fresh model. `encoder.vocab_size` is overwritten with the vocabulary
    /// size.
    pub fn new(vocab: Vocabulary, mut encoder: EncoderConfig, projector: ProjectorConfig) -> Result<Self, ModelError> {
        encoder.vocab_size = vocab.len();
        projector.validate()?;
        let text_encoder = Encoder::new(encoder)?;
        let label_encoder = text_encoder.clone();
        let h = text_encoder.config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(projector.seed);
        let text_projector = QueryProjector::new(&mut rng, h, projector.d, projector.n_queries, projector.n_heads)?;
        let label_projector = LabelProjector::new(&mut rng, h, projector.d);
        Ok(EmotionModel {
            vocab,
            projector_config: projector,
            label_encoder,
            weights: TrainableWeights {
                text_encoder,
                text_projector,
                label_projector,
            },
            meta: ModelMeta::default(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.projector_config.tau
    }

    pub fn dim(&self) -> usize {
        self.projector_config.d
    }

    pub fn hidden(&self) -> usize {
        self.weights.text_encoder.config.hidden
    }

    /// Same weights, different temperature.
    pub fn with_tau(&self, tau: f64) -> Result<Self, ModelError> {
        let mut m = self.clone();
        m.projector_config.tau = tau;
        m.projector_config.validate()?;
        Ok(m)
    }

    pub fn text_encoder(&self) -> ReferenceEncoder<'_> {
        ReferenceEncoder {
            vocab: &self.vocab,
            encoder: &self.weights.text_encoder,
        }
    }

    pub fn label_encoder(&self) -> ReferenceEncoder<'_> {
        ReferenceEncoder {
            vocab: &self.vocab,
            encoder: &self.label_encoder,
        }
    }

    pub fn encode_text(&self, text: &str) -> Result<TokenStates, ModelError> {
        Ok(self.text_encoder().encode_text(text)?)
    }

    /// Marker-position state of the frozen label encoder.
    pub fn encode_label(&self, label: &str) -> Result<Array1<f64>, ModelError> {
        Ok(self.label_encoder().encode_label(label)?)
    }

    pub fn project_text(&self, states: &TokenStates) -> Result<Array1<f64>, ModelError> {
        Ok(self.weights.text_projector.project(states)?)
    }

    pub fn project_label(&self, label_vec: &Array1<f64>) -> Result<Array1<f64>, ModelError> {
        Ok(self.weights.label_projector.project(&label_vec.view())?)
    }

    /// Unit text vector in the emotion space.
    pub fn embed_text(&self, text: &str) -> Result<Array1<f64>, ModelError> {
        self.project_text(&self.encode_text(text)?)
    }

    /// Unit label vector in the emotion space.
    pub fn embed_label(&self, label: &str) -> Result<Array1<f64>, ModelError> {
        self.project_label(&self.encode_label(label)?)
    }

    /// Unit rows, one per label.
    pub fn embed_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Array2<f64>, ModelError> {
        let mut out = Array2::zeros((labels.len(), self.dim()));
        for (mut row, l) in out.rows_mut().into_iter().zip(labels) {
            row.assign(&self.embed_label(l.as_ref())?);
        }
        Ok(out)
    }

    pub fn label_encoder_checksum(&self) -> String {
        parameter_checksum(&self.label_encoder)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let bytes = serde_json::to_vec(&ckpt).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fsio::atomic_write(path, &bytes).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(ModelError::Checkpoint(format!("unexpected format tag {other:?}"))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {v}"))),
            None => return Err(ModelError::Checkpoint("missing version field".into())),
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(ckpt.model)
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::tiny_model;
    use super::*;

    #[test]
    fn label_encoder_starts_as_snapshot() {
        let m = tiny_model(8, 4, 2, 5);
        assert_eq!(m.label_encoder, m.weights.text_encoder);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = tiny_model(8, 4, 2, 5);
        m.save(&p).unwrap();
        let back = EmotionModel::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.embed_text("joy police").unwrap(), m.embed_text("joy police").unwrap());
    }

    #[test]
    fn checkpoint_requires_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"format":"emodistill-checkpoint","model":{}}"#).unwrap();
        assert!(matches!(EmotionModel::load(&p), Err(ModelError::Checkpoint(_))));
        std::fs::write(&p, r#"{"format":"emodistill-checkpoint","version":99,"model":{}}"#).unwrap();
        assert!(matches!(EmotionModel::load(&p), Err(ModelError::Checkpoint(_))));
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = tiny_model(8, 4, 2, 5);
        let t = m.embed_text("happy joy").unwrap();
        let l = m.embed_label("mild joy").unwrap();
        assert!((t.dot(&t) - 1.0).abs() < 1e-12);
        assert!((l.dot(&l) - 1.0).abs() < 1e-12);
    }
}
