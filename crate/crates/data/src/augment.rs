//! Clip-level training augmentation: shared crop, frame discard, flip.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::Clip;
use crate::render::{GLYPH_RADIUS, HEAD_RADIUS, MIRROR_ID, NUM_KEYPOINTS, REF};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub discard: f64,
    pub flip: f64,
    /// Smallest crop side as a fraction of the canvas.
    pub min_crop: f32,
    pub min_frames: usize,
    /// Overrides the random flip decision when set.
    pub force_flip: Option<bool>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { discard: 0.2, flip: 0.5, min_crop: 0.8, min_frames: 4, force_flip: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub clip: Clip,
    /// Clip was too short and was returned untouched.
    pub skipped: bool,
}

/// Square crop window in pixel coordinates: rows/cols `origin .. origin + side - 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRect {
    pub origin: [f32; 2],
    pub side: f32,
}

pub fn augment(clip: &Clip, seed: u64, cfg: &AugmentConfig) -> Augmented {
    if clip.len() <= cfg.min_frames {
        return Augmented { clip: clip.clone(), skipped: true };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rect = sample_crop(clip, cfg.min_crop, &mut rng);
    let mut out = crop(clip, rect);
    let keep = sample_keep(clip.len(), cfg.discard, cfg.min_frames, &mut rng);
    out = select_frames(&out, &keep);
    let flip = cfg.force_flip.unwrap_or_else(|| rng.gen_bool(cfg.flip));
    if flip {
        out = flip_clip(&out);
    }
    Augmented { clip: out, skipped: false }
}

/// Extent of the drawn figure over the whole clip, in pixels.
pub fn figure_bounds(clip: &Clip) -> ([f32; 2], [f32; 2]) {
    let s = clip.size as f32 - 1.0;
    let pad = HEAD_RADIUS.max(GLYPH_RADIUS) * s / (REF - 1.0) + 1.0;
    let mut lo = [f32::MAX; 2];
    let mut hi = [f32::MIN; 2];
    for p in clip.keypoints.chunks(2) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a] * s - pad);
            hi[a] = hi[a].max(p[a] * s + pad);
        }
    }
    (lo.map(|v| v.max(0.0)), hi.map(|v| v.min(s)))
}

fn sample_crop(clip: &Clip, min_frac: f32, rng: &mut ChaCha8Rng) -> CropRect {
    let s = clip.size as f32;
    let (lo, hi) = figure_bounds(clip);
    let need = (hi[0] - lo[0]).max(hi[1] - lo[1]) + 1.0;
    let min_side = (min_frac * s).max(need).min(s);
    let side = if min_side < s { rng.gen_range(min_side..=s) } else { s };
    let origin = std::array::from_fn(|a| {
        let from = (hi[a] - side + 1.0).max(0.0);
        let to = lo[a].min(s - side).max(from);
        if to > from { rng.gen_range(from..=to) } else { from }
    });
    CropRect { origin, side }
}

/// Bilinear resample of `rect` back to the full canvas on every frame.
pub fn crop(clip: &Clip, rect: CropRect) -> Clip {
    let s = clip.size;
    let step = (rect.side - 1.0) / (s as f32 - 1.0);
    // per output index: (lower source index, weight of upper neighbour)
    let taps = |o: f32| -> Vec<(usize, f32)> {
        (0..s)
            .map(|i| {
                let x = (o + i as f32 * step).clamp(0.0, s as f32 - 1.0);
                let x0 = (x.floor() as usize).min(s - 2);
                (x0, x - x0 as f32)
            })
            .collect()
    };
    let (rows, cols) = (taps(rect.origin[0]), taps(rect.origin[1]));
    let mut frames = vec![0.0; clip.frames.len()];
    for (src, dst) in clip.frames.chunks(s * s).zip(frames.chunks_mut(s * s)) {
        for (i, &(r0, wr)) in rows.iter().enumerate() {
            let (a, b) = (&src[r0 * s..(r0 + 1) * s], &src[(r0 + 1) * s..(r0 + 2) * s]);
            for (j, &(c0, wc)) in cols.iter().enumerate() {
                let top = a[c0] + wc * (a[c0 + 1] - a[c0]);
                let bot = b[c0] + wc * (b[c0 + 1] - b[c0]);
                dst[i * s + j] = top + wr * (bot - top);
            }
        }
    }
    let norm = s as f32 - 1.0;
    let keypoints = clip
        .keypoints
        .chunks(2)
        .flat_map(|p| [0, 1].map(|a| ((p[a] * norm - rect.origin[a]) / (rect.side - 1.0)).clamp(0.0, 1.0)))
        .collect();
    Clip { frames, keypoints, ..clip.clone() }
}

fn sample_keep(t: usize, discard: f64, floor: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keep: Vec<bool> = (0..t).map(|_| !rng.gen_bool(discard)).collect();
    let kept = keep.iter().filter(|&&k| k).count();
    if kept < floor {
        let mut dropped: Vec<usize> = (0..t).filter(|&i| !keep[i]).collect();
        dropped.shuffle(rng);
        for &i in dropped.iter().take(floor - kept) {
            keep[i] = true;
        }
    }
    (0..t).filter(|&i| keep[i]).collect()
}

pub fn select_frames(clip: &Clip, keep: &[usize]) -> Clip {
    let n = clip.frame_len();
    let k = NUM_KEYPOINTS * 2;
    Clip {
        frames: keep.iter().flat_map(|&t| clip.frames[t * n..(t + 1) * n].iter().copied()).collect(),
        keypoints: keep.iter().flat_map(|&t| clip.keypoints[t * k..(t + 1) * k].iter().copied()).collect(),
        ..clip.clone()
    }
}

/// Mirror columns; keypoint columns map to 1 - y and left/right ids swap.
pub fn flip_clip(clip: &Clip) -> Clip {
    let s = clip.size;
    let mut frames = clip.frames.clone();
    for row in frames.chunks_mut(s) {
        row.reverse();
    }
    let mut keypoints = clip.keypoints.clone();
    for (src, dst) in clip.keypoints.chunks(NUM_KEYPOINTS * 2).zip(keypoints.chunks_mut(NUM_KEYPOINTS * 2)) {
        for k in 0..NUM_KEYPOINTS {
            let m = MIRROR_ID[k];
            dst[2 * m] = src[2 * k];
            dst[2 * m + 1] = 1.0 - src[2 * k + 1];
        }
    }
    Clip { frames, keypoints, ..clip.clone() }
}
