//! Text and label encoders.
//!
//! The reference encoder is a small pre-LayerNorm transformer trained from
//! scratch. The label side is a frozen copy of the text encoder's initial
//! weights; a label's vector is the final state at the marker position.
//! [`TextEncoder`] is the seam for plugging in other (e.g. pretrained)
//! encoders.

mod encoder;
pub mod layers;
mod tokenizer;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{parameter_checksum, Block, Encoder, EncoderCache};
pub use layers::Parameters;
pub use tokenizer::{split_words, Vocabulary, MARK, MARK_ID, OOV, OOV_ID, PAD, PAD_ID};

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("sequence of {got} tokens exceeds max_len {max}")]
    Length { got: usize, max: usize },
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("token id {0} outside the embedding table")]
    TokenId(usize),
}

/// Per-token hidden states plus the validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStates {
    pub states: Array2<f64>,
    pub mask: Vec<bool>,
}

impl TokenStates {
    pub fn n_tokens(&self) -> usize {
        self.states.nrows()
    }

    pub fn width(&self) -> usize {
        self.states.ncols()
    }

    /// State at the marker (first) position.
    pub fn pooled(&self) -> Array1<f64> {
        self.states.row(0).to_owned()
    }
}

fn default_ffn_width() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    #[serde(default = "default_ffn_width")]
    pub ffn_width: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: width 64, 2 layers, 4 heads.
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 64,
            ffn_width: default_ffn_width(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_len", self.max_len),
            ("ffn_width", self.ffn_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EmbeddingError::Config(format!("{name} must be positive")));
        }
        if self.hidden % self.n_heads != 0 {
            return Err(EmbeddingError::Config(format!(
                "hidden {} not divisible by n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Contract shared by the reference encoder and external adapters.
pub trait TextEncoder: Send + Sync {
    fn hidden(&self) -> usize;
    fn encode_text(&self, text: &str) -> Result<TokenStates, EmbeddingError>;

    /// First-position state of the (frozen) encoder for a label string. The
    /// label is normalized before encoding.
    fn encode_label(&self, label: &str) -> Result<Array1<f64>, EmbeddingError> {
        let norm = crate::corpus::normalize_label(label);
        Ok(self.encode_text(&norm)?.pooled())
    }
}

/// The reference encoder bound to its vocabulary.
pub struct ReferenceEncoder<'a> {
    pub vocab: &'a Vocabulary,
    pub encoder: &'a Encoder,
}

impl TextEncoder for ReferenceEncoder<'_> {
    fn hidden(&self) -> usize {
        self.encoder.config.hidden
    }

    fn encode_text(&self, text: &str) -> Result<TokenStates, EmbeddingError> {
        let ids = self.vocab.tokenize(text);
        self.encoder.encode_ids(&ids)
    }
}
