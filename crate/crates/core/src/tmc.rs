//! Temporal multi-cue module: stacked blocks with a per-cue (intra) path and
//! a fusing (inter) path, each followed by temporal max-pooling.

use stmc_tensor::params::Bound;
use stmc_tensor::{Real, Tape, Var};

use crate::config::{ModelConfig, NUM_CUES};
use crate::layers::{Builder, Result, TConv};
use crate::CoreError;

/// `[T, Cf]` features whose channels split into contiguous per-cue segments.
#[derive(Clone, Debug, PartialEq)]
pub struct CueSequence {
    pub values: Var,
    /// (offset, width) per cue, in (full, hand, face, pose) order.
    pub segments: Vec<(usize, usize)>,
}

impl CueSequence {
    pub fn new(values: Var, widths: &[usize]) -> Self {
        let mut off = 0;
        let segments = widths
            .iter()
            .map(|&w| {
                let s = (off, w);
                off += w;
                s
            })
            .collect();
        CueSequence { values, segments }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.1).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TmcBlock {
    pub intra: Vec<TConv>,
    /// Temporal conv (kernel k) on the previous inter-cue sequence.
    pub inter_o: TConv,
    /// Point-wise conv on the fresh intra-cue output.
    pub inter_f: TConv,
}

#[derive(Clone, Debug)]
pub struct Tmc {
    pub blocks: Vec<TmcBlock>,
    pub width: usize,
}

impl Tmc {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> Self {
        let (c, k) = (cfg.tmc_width, cfg.tmc_kernel);
        let per_cue = c / NUM_CUES;
        b.scope("tmc", |b| {
            let mut widths: Vec<usize> = cfg.cue_widths.to_vec();
            let mut o_width: usize = widths.iter().sum();
            let blocks = (0..cfg.tmc_blocks)
                .map(|l| {
                    b.scope(&format!("block{l}"), |b| {
                        let intra = widths
                            .iter()
                            .enumerate()
                            .map(|(n, &w)| TConv::new(b, &format!("intra.{n}"), w, per_cue, k))
                            .collect();
                        let block = TmcBlock {
                            intra,
                            inter_o: TConv::new(b, "inter.o", o_width, c / 2, k),
                            inter_f: TConv::new(b, "inter.f", c, c / 2, 1),
                        };
                        widths = vec![per_cue; NUM_CUES];
                        o_width = c;
                        block
                    })
                })
                .collect();
            Tmc { blocks, width: c }
        })
    }

    /// Per-cue temporal conv + ReLU; cue `n` only sees segment `n`.
    pub fn intra_path<T: Real>(&self, l: usize, tape: &mut Tape<T>, p: &Bound, f: &CueSequence) -> Result<CueSequence> {
        let parts = tape.split_channels(f.values, &f.widths())?;
        let outs = parts
            .into_iter()
            .zip(&self.blocks[l].intra)
            .map(|(x, conv)| {
                let y = conv.apply(tape, p, x)?;
                Ok(tape.relu(y))
            })
            .collect::<Result<Vec<_>>>()?;
        let widths: Vec<usize> = outs.iter().map(|&v| tape.shape(v)[1]).collect();
        let values = tape.concat_channels(&outs)?;
        Ok(CueSequence::new(values, &widths))
    }

    /// `ReLU([K_k(o_prev), K_1(f_curr)])`.
    pub fn inter_path<T: Real>(&self, l: usize, tape: &mut Tape<T>, p: &Bound, o: Var, f: &CueSequence) -> Result<Var> {
        let a = self.blocks[l].inter_o.apply(tape, p, o)?;
        let b = self.blocks[l].inter_f.apply(tape, p, f.values)?;
        let cat = tape.concat_channels(&[a, b])?;
        Ok(tape.relu(cat))
    }

    /// One block including the pooling of both paths.
    pub fn block<T: Real>(&self, l: usize, tape: &mut Tape<T>, p: &Bound, o: Var, f: &CueSequence) -> Result<(Var, CueSequence)> {
        if tape.shape(o)[0] < 2 {
            return Err(CoreError::TooShort { frames: tape.shape(o)[0], needed: 2 });
        }
        let f_next = self.intra_path(l, tape, p, f)?;
        let o_next = self.inter_path(l, tape, p, o, &f_next)?;
        let o_pooled = tape.temporal_maxpool(o_next)?;
        let f_pooled = tape.temporal_maxpool(f_next.values)?;
        Ok((o_pooled, CueSequence { values: f_pooled, segments: f_next.segments }))
    }

    /// `[T, Cf]` → (inter-cue `[T', C]`, N intra-cue `[T', C/N]`).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, features: Var, cue_widths: &[usize]) -> Result<(Var, Vec<Var>)> {
        let t = tape.shape(features)[0];
        let need = 1 << self.blocks.len();
        if t < need {
            return Err(CoreError::TooShort { frames: t, needed: need });
        }
        let mut o = features;
        let mut f = CueSequence::new(features, cue_widths);
        for l in 0..self.blocks.len() {
            (o, f) = self.block(l, tape, p, o, &f)?;
        }
        let intra = tape.split_channels(f.values, &f.widths())?;
        Ok((o, intra))
    }
}
