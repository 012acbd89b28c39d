//! Unsupervised translation between a terse and a verbose register of a
//! character-level language: vocabulary and corpora, denoising noise,
//! phrase-segmentation padding, the dual encoder/decoder transformer,
//! the training loop, evaluation metrics, and the synthetic language pair.

pub mod check;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod noise;
pub mod padding;
pub mod synth;
pub mod train;
pub mod vocab;

pub use corpus::{Example, Lang, TokenSeq};
pub use error::{Error, Result};
pub use eval::{BleuReport, Coverage};
pub use model::{Model, ModelDims, PaddingInfo};
pub use noise::NoiseSpec;
pub use padding::SegmentationSchema;
pub use synth::{ExpansionTable, SynthConfig, SynthRule};
pub use train::{StepReport, TrainConfig};
pub use umt_tensor::checkpoint::Checkpoint;
pub use vocab::Vocabulary;
