//! Contrastive distillation of free-form emotion descriptors into a compact
//! text/label dual encoder.
//!
//! Texts and descriptor phrases are projected into one shared, L2-normalized
//! emotion space. Training aligns each text with the descriptors an LLM
//! produced for it (a multi-label sigmoid contrastive objective); at inference
//! the descriptor side is swapped for any fixed label set, which gives
//! zero-shot single-label, multi-label and valence/activation prediction.
//!
//! Module map:
//!
//! - [`corpus`]: records, loaders, validation reservation, vocabulary
//!   statistics and the synthetic corpus generator.
//! - [`annotator`]: elicitation prompt, pluggable LLM clients, response
//!   parsing and the on-disk annotation cache.
//! - [`embedding`]: tokenizer and the from-scratch reference transformer.
//! - [`alignment`]: projectors, the alignment matrix and the loss.
//! - [`model`]: the assembled dual encoder and its checkpoint container.
//! - [`training`]: batch assembly, the optimization loop and the dimension
//!   ablation runner.
//! - [`inference`]: scoring and the three prediction heads, plus threshold
//!   calibration.
//! - [`evaluation`]: metrics, evaluation reports and the nearest-neighbour
//!   probe.
//! - [`cli`]: the `emodistill` command line.

pub mod alignment;
pub mod annotator;
pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod fsio;
pub mod inference;
pub mod model;
pub mod provenance;
pub mod training;

pub use alignment::{AlignmentError, ProjectorConfig};
pub use annotator::{AnnotatorError, LlmClient, MockClient};
pub use corpus::{
    DescriptorAnnotation, LabelSpace, LabelSpaceKind, Split, SyntheticCorpus, SyntheticSpec,
    TextSample,
};
pub use embedding::{EncoderConfig, EmbeddingError};
pub use evaluation::{EvalReport, NeighborTable};
pub use inference::{ScoreVector, ThresholdTable};
pub use model::EmotionModel;
pub use training::{TrainConfig, TrainReport};
