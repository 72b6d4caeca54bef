//! Synthetic signing corpus: an upper-body stick figure whose hand glyphs,
//! face markings and wrist motion jointly identify each gloss.

pub mod augment;
pub mod clip;
pub mod gloss;
pub mod io;
pub mod render;

use std::path::PathBuf;

pub use augment::{augment, flip_clip, AugmentConfig, Augmented};
pub use clip::{generate_clip, generate_corpus, Clip, ClipStyle, Corpus, CorpusConfig, Split};
pub use gloss::{GlossSpec, Inventory};
pub use io::{read_dataset, read_manifest, write_dataset, Manifest};
pub use render::{KEYPOINT_NAMES, NUM_KEYPOINTS};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt header in {path}: {detail}")]
    BadHeader { path: PathBuf, detail: String },
    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("checksum mismatch for clip {id}: manifest {expected}, file {found}")]
    Checksum { id: String, expected: String, found: String },
    #[error("shape mismatch for clip {id}: {detail}")]
    ShapeMismatch { id: String, detail: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("unknown gloss id {0}")]
    UnknownGloss(usize),
    #[error("empty gloss sequence")]
    EmptyGlossSequence,
    #[error("invalid configuration: {0}")]
    Config(String),
}
