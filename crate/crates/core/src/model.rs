//! The full network: SMC over all frames, TMC per clip, one BLSTM encoder for
//! the inter-cue sequence and one per intra-cue sequence.

use stmc_data::Clip;
use stmc_tensor::params::Bound;
use stmc_tensor::{NdArray, ParamId, ParamStore, Real, Tape, Var};

use crate::config::{ModelConfig, NUM_CUES};
use crate::layers::{Blstm, Builder, Result};
use crate::smc::Smc;
use crate::tmc::Tmc;
use crate::CoreError;

#[derive(Clone, Debug)]
pub struct Stmc {
    pub cfg: ModelConfig,
    /// |V| including blank.
    pub labels: usize,
    pub smc: Smc,
    pub tmc: Tmc,
    pub inter: Blstm,
    pub intra: Vec<Blstm>,
}

/// Per-clip outputs; all logits are `[T', |V|]`.
#[derive(Clone, Debug)]
pub struct ClipOutput {
    pub inter_logits: Var,
    pub intra_logits: Vec<Var>,
    /// `[T, K, 2]`
    pub keypoints: Var,
    pub frames: usize,
}

impl Stmc {
    pub fn new(cfg: &ModelConfig, labels: usize, seed: u64) -> Result<(Stmc, ParamStore<f32>)> {
        cfg.validate()?;
        if labels < 2 {
            return Err(CoreError::Vocabulary(format!("label space of size {labels} has no glosses")));
        }
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, seed);
        let smc = Smc::new(&mut b, cfg);
        let tmc = Tmc::new(&mut b, cfg);
        let c = cfg.tmc_width;
        let inter = Blstm::new(&mut b, "inter", c, cfg.inter_hidden, labels);
        let intra = (0..NUM_CUES)
            .map(|n| Blstm::new(&mut b, &format!("intra{n}"), c / NUM_CUES, cfg.intra_hidden, labels))
            .collect();
        Ok((Stmc { cfg: cfg.clone(), labels, smc, tmc, inter, intra }, store))
    }

    /// Ids of the intra-cue encoder parameters (BLSTMs and projections).
    pub fn intra_encoder_params(&self) -> Vec<ParamId> {
        self.intra
            .iter()
            .flat_map(|e| {
                [&e.fwd, &e.bwd]
                    .into_iter()
                    .flat_map(|l| [l.w_ih, l.w_hh, l.bias])
                    .chain([e.proj.weight, e.proj.bias])
            })
            .collect()
    }

    /// Stack the frames of `clips` into one `[ΣT, 3, S, S]` array, centred
    /// around zero.
    pub fn stack_frames<T: Real>(&self, clips: &[&Clip]) -> Result<NdArray<T>> {
        let s = self.cfg.input_size;
        let mut data = Vec::new();
        let mut total = 0;
        for c in clips {
            if c.size != s {
                return Err(CoreError::Shape(format!("clip {} has size {}, model expects {s}", c.id, c.size)));
            }
            data.extend(c.frames.iter().map(|&v| T::from_f64_lossy(v as f64 - 0.5)));
            total += c.len();
        }
        Ok(NdArray::new(vec![total, 3, s, s], data)?)
    }

    /// Forward a batch of clips whose frames are stacked in `frames`; `lens`
    /// holds the frame count of each clip in order.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, frames: Var, lens: &[usize]) -> Result<Vec<ClipOutput>> {
        let total: usize = lens.iter().sum();
        if tape.shape(frames).first() != Some(&total) {
            return Err(CoreError::Shape(format!("{:?} frames for lengths {lens:?}", tape.shape(frames))));
        }
        if let Some(&t) = lens.iter().find(|&&t| t < self.cfg.min_frames()) {
            return Err(CoreError::TooShort { frames: t, needed: self.cfg.min_frames() });
        }
        let smc = self.smc.forward(tape, p, frames)?;
        let mut outs = Vec::with_capacity(lens.len());
        let mut start = 0;
        for &t in lens {
            let feats = tape.slice(smc.features, 0, start, t)?;
            let keypoints = tape.slice(smc.keypoints, 0, start, t)?;
            start += t;
            let (o, f) = self.tmc.forward(tape, p, feats, &self.cfg.cue_widths)?;
            let inter_logits = self.inter.logits(tape, p, o)?;
            let intra_logits =
                f.into_iter().zip(&self.intra).map(|(x, enc)| enc.logits(tape, p, x)).collect::<Result<Vec<_>>>()?;
            outs.push(ClipOutput { inter_logits, intra_logits, keypoints, frames: t });
        }
        Ok(outs)
    }

    /// Convenience wrapper: stack, bind as a constant and run [`Stmc::forward`].
    pub fn forward_clips<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, clips: &[&Clip]) -> Result<Vec<ClipOutput>> {
        let x = self.stack_frames::<T>(clips)?;
        let lens: Vec<usize> = clips.iter().map(|c| c.len()).collect();
        let frames = tape.constant(x);
        self.forward(tape, p, frames, &lens)
    }
}
