//! Run configuration: flat `key = value` text with `#` comments.
//!
//! Every key has a default; unknown keys are errors. `to_text` emits the
//! fully resolved configuration, which parses back to the same value.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use stmc_data::{ClipStyle, CorpusConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("key '{key}': cannot parse '{value}'")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaMode {
    /// smoothL1(β·(J − Ĵ))
    Inside,
    /// β·smoothL1(J − Ĵ)
    Outside,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    /// Output channels of the four backbone stages; the second stage is the mid map.
    pub backbone_channels: Vec<usize>,
    pub deconv_channels: usize,
    pub keypoints: usize,
    pub crop_hand: usize,
    pub crop_face: usize,
    /// (full, hand, face, pose) feature widths; hand covers both hands.
    pub cue_widths: [usize; 4],
    pub tmc_blocks: usize,
    pub tmc_kernel: usize,
    pub tmc_width: usize,
    pub inter_hidden: usize,
    pub intra_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 96,
            backbone_channels: vec![8, 32, 48, 64],
            deconv_channels: 16,
            keypoints: 7,
            crop_hand: 10,
            crop_face: 7,
            cue_widths: [64, 32, 16, 16],
            tmc_blocks: 2,
            tmc_kernel: 5,
            tmc_width: 128,
            inter_hidden: 64,
            intra_hidden: 16,
        }
    }
}

pub const NUM_CUES: usize = 4;
pub const CUE_NAMES: [&str; NUM_CUES] = ["full", "hand", "face", "pose"];

impl ModelConfig {
    pub fn paper_scale() -> Self {
        ModelConfig {
            input_size: 224,
            backbone_channels: vec![64, 256, 512, 512],
            deconv_channels: 256,
            keypoints: 7,
            crop_hand: 24,
            crop_face: 16,
            cue_widths: [512, 512, 256, 256],
            tmc_blocks: 2,
            tmc_kernel: 5,
            tmc_width: 1024,
            inter_hidden: 512,
            intra_hidden: 128,
        }
    }

    pub fn mid_size(&self) -> usize {
        self.input_size / 4
    }

    /// Temporal length after the TMC poolings.
    pub fn pooled_len(&self, t: usize) -> usize {
        (0..self.tmc_blocks).fold(t, |t, _| t / 2)
    }

    pub fn min_frames(&self) -> usize {
        1 << self.tmc_blocks
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return bad(format!("input_size {} must be a positive multiple of 16", self.input_size));
        }
        if self.backbone_channels.len() != 4 || self.backbone_channels.contains(&0) {
            return bad("backbone_channels needs four positive widths".into());
        }
        if self.cue_widths[0] != self.backbone_channels[3] {
            return bad(format!(
                "full-frame cue width {} must equal the last backbone width {}",
                self.cue_widths[0], self.backbone_channels[3]
            ));
        }
        if self.cue_widths[1] % 2 != 0 || self.cue_widths.contains(&0) {
            return bad("cue widths must be positive and the hand width even".into());
        }
        let mid = self.mid_size();
        if self.crop_hand == 0 || self.crop_face == 0 || self.crop_hand > mid || self.crop_face > mid {
            return bad(format!("crop sizes must lie in [1, {mid}]"));
        }
        if self.keypoints != stmc_data::NUM_KEYPOINTS {
            return bad(format!("keypoints must be {}", stmc_data::NUM_KEYPOINTS));
        }
        if self.tmc_kernel % 2 == 0 {
            return bad(format!("tmc_kernel {} must be odd", self.tmc_kernel));
        }
        if self.tmc_blocks == 0 {
            return bad("tmc_blocks must be at least 1".into());
        }
        if self.tmc_width % NUM_CUES != 0 || self.tmc_width % 2 != 0 {
            return bad(format!("tmc_width {} must be divisible by 2 and by {NUM_CUES}", self.tmc_width));
        }
        if self.inter_hidden == 0 || self.intra_hidden == 0 || self.deconv_channels == 0 {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub beta_mode: BetaMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.6, beta: 30.0, beta_mode: BetaMode::Inside }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub augment: bool,
    pub beam_width: usize,
    pub eval_every: usize,
    /// Stop once train-split WER is at or below this; negative disables.
    pub stop_train_wer: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 2,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            augment: true,
            beam_width: 20,
            eval_every: 5,
            stop_train_wer: -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub data_dir: PathBuf,
    pub vocab_size: usize,
    pub train_clips: usize,
    pub dev_clips: usize,
    pub test_clips: usize,
    pub glosses_min: usize,
    pub glosses_max: usize,
    pub duration_min: usize,
    pub duration_max: usize,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            data_dir: PathBuf::from("data"),
            vocab_size: 10,
            train_clips: 50,
            dev_clips: 10,
            test_clips: 10,
            glosses_min: 2,
            glosses_max: 4,
            duration_min: 6,
            duration_max: 10,
            data_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Desk defaults with the model and learning rate swapped for paper scale.
    pub fn paper_scale() -> Self {
        let mut c = RunConfig { model: ModelConfig::paper_scale(), ..RunConfig::default() };
        c.train.lr = 5e-5;
        c.data.duration_min = 8;
        c.data.duration_max = 16;
        c
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (m, l, t, d) = (&mut self.model, &mut self.loss, &mut self.train, &mut self.data);
        match key {
            "input_size" => m.input_size = parse(key, value)?,
            "backbone_channels" => m.backbone_channels = parse_list(key, value)?,
            "deconv_channels" => m.deconv_channels = parse(key, value)?,
            "K" | "keypoints" => m.keypoints = parse(key, value)?,
            "crop_hand" => m.crop_hand = parse(key, value)?,
            "crop_face" => m.crop_face = parse(key, value)?,
            "cue_widths" => {
                m.cue_widths = parse_list(key, value)?
                    .try_into()
                    .map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })?
            }
            "tmc_blocks" => m.tmc_blocks = parse(key, value)?,
            "tmc_kernel" => m.tmc_kernel = parse(key, value)?,
            "tmc_width" => m.tmc_width = parse(key, value)?,
            "inter_hidden" => m.inter_hidden = parse(key, value)?,
            "intra_hidden" => m.intra_hidden = parse(key, value)?,
            "alpha" => l.alpha = parse(key, value)?,
            "beta" => l.beta = parse(key, value)?,
            "beta_mode" => {
                l.beta_mode = match value {
                    "inside" => BetaMode::Inside,
                    "outside" => BetaMode::Outside,
                    _ => return Err(ConfigError::BadValue { key: key.into(), value: value.into() }),
                }
            }
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "augment" => t.augment = parse(key, value)?,
            "beam_width" => t.beam_width = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "stop_train_wer" => t.stop_train_wer = parse(key, value)?,
            "data_dir" => d.data_dir = PathBuf::from(value),
            "vocab_size" => d.vocab_size = parse(key, value)?,
            "train_clips" => d.train_clips = parse(key, value)?,
            "dev_clips" => d.dev_clips = parse(key, value)?,
            "test_clips" => d.test_clips = parse(key, value)?,
            "glosses_min" => d.glosses_min = parse(key, value)?,
            "glosses_max" => d.glosses_max = parse(key, value)?,
            "duration_min" => d.duration_min = parse(key, value)?,
            "duration_max" => d.duration_max = parse(key, value)?,
            "data_seed" => d.data_seed = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, l, t, d) = (&self.model, &self.loss, &self.train, &self.data);
        vec![
            ("input_size", m.input_size.to_string()),
            ("backbone_channels", join(&m.backbone_channels)),
            ("deconv_channels", m.deconv_channels.to_string()),
            ("keypoints", m.keypoints.to_string()),
            ("crop_hand", m.crop_hand.to_string()),
            ("crop_face", m.crop_face.to_string()),
            ("cue_widths", join(&m.cue_widths)),
            ("tmc_blocks", m.tmc_blocks.to_string()),
            ("tmc_kernel", m.tmc_kernel.to_string()),
            ("tmc_width", m.tmc_width.to_string()),
            ("inter_hidden", m.inter_hidden.to_string()),
            ("intra_hidden", m.intra_hidden.to_string()),
            ("alpha", l.alpha.to_string()),
            ("beta", l.beta.to_string()),
            ("beta_mode", if l.beta_mode == BetaMode::Inside { "inside" } else { "outside" }.into()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("seed", t.seed.to_string()),
            ("augment", t.augment.to_string()),
            ("beam_width", t.beam_width.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("stop_train_wer", t.stop_train_wer.to_string()),
            ("data_dir", d.data_dir.display().to_string()),
            ("vocab_size", d.vocab_size.to_string()),
            ("train_clips", d.train_clips.to_string()),
            ("dev_clips", d.dev_clips.to_string()),
            ("test_clips", d.test_clips.to_string()),
            ("glosses_min", d.glosses_min.to_string()),
            ("glosses_max", d.glosses_max.to_string()),
            ("duration_min", d.duration_min.to_string()),
            ("duration_max", d.duration_max.to_string()),
            ("data_seed", d.data_seed.to_string()),
        ]
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(self.loss.alpha >= 0.0) || !(self.loss.beta > 0.0) {
            return bad("alpha must be >= 0 and beta > 0");
        }
        let t = &self.train;
        if t.batch_size == 0 || t.beam_width == 0 || t.eval_every == 0 || !(t.lr > 0.0) {
            return bad("batch_size, beam_width, eval_every and lr must be positive");
        }
        let d = &self.data;
        if d.glosses_min == 0 || d.glosses_min > d.glosses_max || d.duration_min > d.duration_max {
            return bad("gloss count and duration ranges must be non-empty");
        }
        Ok(())
    }

    pub fn corpus(&self) -> CorpusConfig {
        let d = &self.data;
        CorpusConfig {
            vocab_size: d.vocab_size,
            train: d.train_clips,
            dev: d.dev_clips,
            test: d.test_clips,
            glosses_per_clip: (d.glosses_min, d.glosses_max),
            duration: (d.duration_min, d.duration_max),
            style: ClipStyle { size: self.model.input_size, ..ClipStyle::default() },
            seed: d.data_seed,
        }
    }
}
