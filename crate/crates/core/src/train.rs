//! End-to-end training with the joint loss, and beam-search evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmc_data::{augment, AugmentConfig, Clip};
use stmc_tensor::{checkpoint, Adam, AdamConfig, NdArray, ParamId, ParamStore, Tape};

use crate::config::{RunConfig, NUM_CUES};
use crate::ctc::required_steps;
use crate::decode::beam_search_decode;
use crate::layers::Result;
use crate::loss::{batch_loss, LossParts};
use crate::model::Stmc;
use crate::vocab::{PosteriorSequence, Vocabulary};
use crate::wer::{edit_counts, EditCounts};
use crate::CoreError;

/// Derive an independent stream seed from a tuple of integers (splitmix64).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// CTC targets are gloss ids shifted past the blank.
pub fn target_of(clip: &Clip) -> Vec<usize> {
    Vocabulary::labels_from_ids(&clip.glosses)
}

#[derive(Clone, Debug, Default)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossParts,
    pub batches: usize,
    /// Augmented clips replaced by their original because they became too
    /// short for the target.
    pub fallbacks: usize,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub vocab: Vocabulary,
    pub model: Stmc,
    pub params: ParamStore<f32>,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig, vocab: Vocabulary) -> Result<Self> {
        cfg.validate()?;
        let (model, params) = Stmc::new(&cfg.model, vocab.size(), derive_seed(&[cfg.train.seed, 1]))?;
        let t = &cfg.train;
        let adam = Adam::new(
            AdamConfig { lr: t.lr, beta1: t.adam_beta1, beta2: t.adam_beta2, eps: t.adam_eps },
            params.values(),
        );
        Ok(Trainer { cfg, vocab, model, params, adam, epoch: 0 })
    }

    /// Augmented copy of `clip` for this epoch, or the clip itself when
    /// augmentation is off or the result could no longer hold the target.
    fn training_view(&self, clip: &Clip, epoch: usize, index: usize) -> (Clip, bool) {
        if !self.cfg.train.augment {
            return (clip.clone(), false);
        }
        let seed = derive_seed(&[self.cfg.train.seed, 2, epoch as u64, index as u64]);
        let a = augment(clip, seed, &AugmentConfig::default());
        let need = required_steps(&target_of(clip));
        let m = &self.cfg.model;
        if a.clip.len() >= m.min_frames() && m.pooled_len(a.clip.len()) >= need {
            (a.clip, false)
        } else {
            (clip.clone(), true)
        }
    }

    /// One optimization step on `batch`; returns the per-clip loss parts.
    pub fn step(&mut self, batch: &[&Clip]) -> Result<Vec<LossParts>> {
        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape);
        let outs = self.model.forward_clips(&mut tape, &bound, batch)?;
        let targets: Vec<Vec<usize>> = batch.iter().map(|c| target_of(c)).collect();
        let truths = batch
            .iter()
            .map(|c| NdArray::new(vec![c.len(), self.model.cfg.keypoints, 2], c.keypoints.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (loss, parts) = batch_loss(&mut tape, &outs, &targets, &truths, &self.cfg.loss)?;
        if !tape.value(loss).data()[0].is_finite() {
            return Err(CoreError::Numerical("non-finite loss".into()));
        }
        tape.backward(loss)?;
        let grads = self.params.gradients(&tape, &bound);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(CoreError::Numerical("non-finite gradient".into()));
        }
        self.adam.step(self.params.values_mut(), &grads)?;
        Ok(parts)
    }

    /// Train one epoch over `clips` in a seeded order.
    pub fn run_epoch(&mut self, clips: &[&Clip]) -> Result<EpochStats> {
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[self.cfg.train.seed, 3, epoch as u64])));
        let mut stats = EpochStats { epoch: epoch + 1, ..Default::default() };
        let mut all = Vec::with_capacity(clips.len());
        for (b, chunk) in order.chunks(self.cfg.train.batch_size).enumerate() {
            let views: Vec<Clip> = chunk
                .iter()
                .map(|&i| {
                    let (c, fell_back) = self.training_view(clips[i], epoch, i);
                    stats.fallbacks += usize::from(fell_back);
                    c
                })
                .collect();
            let refs: Vec<&Clip> = views.iter().collect();
            let parts = self.step(&refs).map_err(|e| match e {
                CoreError::Numerical(m) => {
                    let ids: Vec<&str> = chunk.iter().map(|&i| clips[i].id.as_str()).collect();
                    CoreError::Numerical(format!("{m} in epoch {} batch {b} ({})", epoch + 1, ids.join(", ")))
                }
                other => other,
            })?;
            all.extend(parts);
            stats.batches += 1;
        }
        stats.loss = LossParts::mean(&all);
        self.epoch += 1;
        Ok(stats)
    }

    pub fn evaluate(&self, clips: &[&Clip], beam: usize, per_cue: bool) -> Result<EvalReport> {
        evaluate(&self.model, &self.params, clips, beam, per_cue)
    }

    /// Order-sensitive digest of the given parameters' values.
    pub fn param_digest(&self, ids: &[ParamId]) -> u64 {
        let bits: Vec<u64> =
            ids.iter().flat_map(|&id| self.params.get(id).data().iter().map(|v| v.to_bits() as u64)).collect();
        derive_seed(&bits)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CoreError::Io { path, source }
        };
        let ckpt = dir.join("model.ckpt");
        checkpoint::save(&self.params, BufWriter::new(File::create(&ckpt).map_err(io(&ckpt))?))?;
        let opt = dir.join("optimizer.bin");
        let mut w = BufWriter::new(File::create(&opt).map_err(io(&opt))?);
        write_optimizer(&mut w, &self.adam, self.epoch).map_err(io(&opt))?;
        w.flush().map_err(io(&opt))?;
        Ok(())
    }

    /// Restore parameters, and optimizer state plus epoch counter when the
    /// sidecar is present.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CoreError::Io { path, source }
        };
        let ckpt = dir.join("model.ckpt");
        checkpoint::load(&mut self.params, BufReader::new(File::open(&ckpt).map_err(io(&ckpt))?))?;
        let opt = dir.join("optimizer.bin");
        if opt.exists() {
            let mut r = BufReader::new(File::open(&opt).map_err(io(&opt))?);
            let (step, epoch, m, v) = read_optimizer(&mut r).map_err(io(&opt))?;
            self.adam.restore(step, m, v)?;
            self.epoch = epoch;
        }
        Ok(())
    }
}

const OPT_MAGIC: &[u8; 8] = b"STMCADAM";

fn write_optimizer<W: Write>(w: &mut W, adam: &Adam, epoch: usize) -> std::io::Result<()> {
    let (m, v) = adam.moments();
    w.write_all(OPT_MAGIC)?;
    w.write_all(&adam.steps().to_le_bytes())?;
    w.write_all(&(epoch as u64).to_le_bytes())?;
    w.write_all(&(m.len() as u64).to_le_bytes())?;
    for moments in [m, v] {
        for p in moments {
            w.write_all(&(p.len() as u64).to_le_bytes())?;
            for x in p {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

type OptimizerState = (u64, usize, Vec<Vec<f64>>, Vec<Vec<f64>>);

fn read_optimizer<R: Read>(r: &mut R) -> std::io::Result<OptimizerState> {
    let mut u64_ = || -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let magic = u64_()?.to_le_bytes();
    if &magic != OPT_MAGIC {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "not an optimizer state file"));
    }
    let (step, epoch, n) = (u64_()?, u64_()? as usize, u64_()? as usize);
    let mut read = || -> std::io::Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| {
                let len = u64_()? as usize;
                (0..len).map(|_| Ok(f64::from_bits(u64_()?))).collect()
            })
            .collect()
    };
    let m = read()?;
    let v = read()?;
    Ok((step, epoch, m, v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipResult {
    pub id: String,
    /// 0-based gloss ids.
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    /// Per intra-cue encoder hypotheses when requested.
    pub cue_hypotheses: Option<Vec<Vec<usize>>>,
    pub counts: EditCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub wer: f64,
    pub counts: EditCounts,
    pub ref_words: usize,
    /// Corpus WER of each intra-cue encoder in (full, hand, face, pose) order.
    pub cue_wer: Option<[f64; NUM_CUES]>,
    /// Mean Euclidean keypoint error in mid-map cells.
    pub keypoint_error: f64,
    pub clips: Vec<ClipResult>,
}

fn decode_logits(tape: &Tape<f32>, logits: stmc_tensor::Var, beam: usize) -> Result<Vec<usize>> {
    let shape = tape.shape(logits);
    let post = PosteriorSequence::from_logits(shape[0], shape[1], &tape.value(logits).to_f64_vec())?;
    Ok(beam_search_decode(&post, beam).into_iter().map(|l| l - 1).collect())
}

/// Beam-search decode every clip with the inter-cue encoder (and, with
/// `per_cue`, each intra-cue encoder) and score against the references.
pub fn evaluate(model: &Stmc, params: &ParamStore<f32>, clips: &[&Clip], beam: usize, per_cue: bool) -> Result<EvalReport> {
    let mut counts = EditCounts::default();
    let mut cue_counts = [EditCounts::default(); NUM_CUES];
    let (mut ref_words, mut kp_sum, mut kp_n) = (0, 0.0, 0usize);
    let cells = (model.cfg.mid_size() - 1) as f64;
    let mut results = Vec::with_capacity(clips.len());
    for clip in clips {
        let mut tape = Tape::<f32>::new();
        let bound = params.bind(&mut tape);
        let out = model.forward_clips(&mut tape, &bound, &[clip])?.remove(0);
        let hyp = decode_logits(&tape, out.inter_logits, beam)?;
        let c = edit_counts(&clip.glosses, &hyp);
        counts += c;
        ref_words += clip.glosses.len();
        let cue_hypotheses = if per_cue {
            let hs = out.intra_logits.iter().map(|&l| decode_logits(&tape, l, beam)).collect::<Result<Vec<_>>>()?;
            for (acc, h) in cue_counts.iter_mut().zip(&hs) {
                *acc += edit_counts(&clip.glosses, h);
            }
            Some(hs)
        } else {
            None
        };
        let pred = tape.value(out.keypoints).data();
        for (p, t) in pred.chunks(2).zip(clip.keypoints.chunks(2)) {
            let (dr, dc) = ((p[0] - t[0]) as f64, (p[1] - t[1]) as f64);
            kp_sum += (dr * dr + dc * dc).sqrt() * cells;
            kp_n += 1;
        }
        results.push(ClipResult {
            id: clip.id.clone(),
            reference: clip.glosses.clone(),
            hypothesis: hyp,
            cue_hypotheses,
            counts: c,
        });
    }
    if ref_words == 0 {
        return Err(CoreError::EmptyReference);
    }
    let rate = |c: &EditCounts| c.total() as f64 / ref_words as f64;
    Ok(EvalReport {
        wer: rate(&counts),
        counts,
        ref_words,
        cue_wer: per_cue.then(|| cue_counts.map(|c| rate(&c))),
        keypoint_error: kp_sum / kp_n.max(1) as f64,
        clips: results,
    })
}
