//! Spatial-temporal multi-cue sequence recognition: the SMC and TMC modules,
//! BLSTM encoders with CTC, joint-loss training, decoding and WER.

pub mod config;
pub mod ctc;
pub mod decode;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod smc;
pub mod tmc;
pub mod train;
pub mod vocab;
pub mod wer;

pub use config::{BetaMode, ConfigError, RunConfig};
pub use model::{ClipOutput, Stmc};
pub use vocab::{PosteriorSequence, Vocabulary, BLANK};

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("label: {0}")]
    Label(String),
    #[error("target longer than representable: needs {needed} steps, have {steps}")]
    Inadmissible { steps: usize, needed: usize },
    #[error("sequence of {frames} frames is too short; need at least {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("empty reference sequence")]
    EmptyReference,
    #[error(transparent)]
    Tensor(#[from] stmc_tensor::TensorError),
    #[error(transparent)]
    Data(#[from] stmc_data::DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] stmc_tensor::checkpoint::CheckpointError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}
