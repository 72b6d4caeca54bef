use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gloss::{motion_path, FacePattern, HandGlyph, Inventory, REST_WRIST};
use crate::render::{render_frame, Appearance, PoseState, NUM_KEYPOINTS, REF};
use crate::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| DataError::Config(format!("unknown split '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub split: Split,
    pub size: usize,
    /// `[T, 3, S, S]` flattened.
    pub frames: Vec<f32>,
    /// `[T, K, 2]` normalized (row, col).
    pub keypoints: Vec<f32>,
    /// 0-based gloss ids.
    pub glosses: Vec<usize>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.keypoints.len() / (NUM_KEYPOINTS * 2)
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        3 * self.size * self.size
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frame_keypoints(&self, t: usize) -> &[f32] {
        &self.keypoints[t * NUM_KEYPOINTS * 2..(t + 1) * NUM_KEYPOINTS * 2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipStyle {
    pub size: usize,
    /// Frames inserted between consecutive glosses (inclusive).
    pub transition: (usize, usize),
    /// Half-width of the uniform per-pixel noise.
    pub noise: f32,
}

impl Default for ClipStyle {
    fn default() -> Self {
        ClipStyle { size: 96, transition: (1, 3), noise: 0.02 }
    }
}

/// Per-clip signer variation, on the 96-unit grid.
struct Jitter {
    shift: [f32; 2],
    amplitude: f32,
    background: [f32; 3],
}

fn pose_for(left_wrist: [f32; 2], j: &Jitter, scale: f32) -> PoseState {
    let nose = [24.0, 48.0];
    let l_sh = [42.0, 34.0];
    let w = [l_sh[0] + j.amplitude * (left_wrist[0] - l_sh[0]), l_sh[1] + j.amplitude * (left_wrist[1] - l_sh[1])];
    let elbow = elbow_for(l_sh, w);
    let mirror = |p: [f32; 2]| [p[0], REF - 1.0 - p[1]];
    let lim = REF - 1.0 - 2.0;
    let place = |p: [f32; 2]| {
        [(p[0] + j.shift[0]).clamp(2.0, lim) * scale, (p[1] + j.shift[1]).clamp(2.0, lim) * scale]
    };
    PoseState {
        joints: [
            place(nose),
            place(l_sh),
            place(mirror(l_sh)),
            place(elbow),
            place(mirror(elbow)),
            place(w),
            place(mirror(w)),
        ],
    }
}

/// Elbow bends outward (towards the image edge) with fixed segment length.
fn elbow_for(shoulder: [f32; 2], wrist: [f32; 2]) -> [f32; 2] {
    const SEGMENT: f32 = 22.0;
    let d = [wrist[0] - shoulder[0], wrist[1] - shoulder[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-3);
    let bend = (SEGMENT * SEGMENT - len * len * 0.25).max(0.0).sqrt();
    let mut n = [-d[1] / len, d[0] / len];
    if n[1] > 0.0 {
        n = [-n[0], -n[1]];
    }
    [shoulder[0] + d[0] * 0.5 + n[0] * bend, shoulder[1] + d[1] * 0.5 + n[1] * bend]
}

/// Render a clip for `glosses`; a pure function of its arguments.
pub fn generate_clip(inv: &Inventory, glosses: &[usize], seed: u64, style: &ClipStyle) -> Result<Clip, DataError> {
    if glosses.is_empty() {
        return Err(DataError::EmptyGlossSequence);
    }
    if style.size < 16 || style.transition.0 > style.transition.1 {
        return Err(DataError::Config(format!("bad clip style {style:?}")));
    }
    let specs = glosses.iter().map(|&g| inv.get(g)).collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grey = rng.gen_range(0.05..0.25f32);
    let jitter = Jitter {
        shift: [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)],
        amplitude: rng.gen_range(0.9..1.1),
        background: std::array::from_fn(|_| grey + rng.gen_range(-0.03..0.03f32)),
    };
    let scale = (style.size as f32 - 1.0) / (REF - 1.0);

    // (left wrist on the reference grid, appearance) per frame
    let neutral = Appearance { left: HandGlyph::Neutral, right: HandGlyph::Neutral, face: FacePattern::Neutral };
    let mut plan: Vec<([f32; 2], Appearance)> = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        if i > 0 {
            let from = plan.last().map(|p| p.0).unwrap_or(REST_WRIST);
            let to = motion_path(spec.motion, 0.0);
            let n = rng.gen_range(style.transition.0..=style.transition.1);
            for k in 0..n {
                let a = (k + 1) as f32 / (n + 1) as f32;
                plan.push(([from[0] + a * (to[0] - from[0]), from[1] + a * (to[1] - from[1])], neutral));
            }
        }
        let d = rng.gen_range(spec.duration.0..=spec.duration.1);
        let look = Appearance { left: spec.left, right: spec.right, face: spec.face };
        for t in 0..d {
            plan.push((motion_path(spec.motion, t as f32 / (d - 1) as f32), look));
        }
    }

    let frame_len = 3 * style.size * style.size;
    let mut frames = Vec::with_capacity(plan.len() * frame_len);
    let mut keypoints = Vec::with_capacity(plan.len() * NUM_KEYPOINTS * 2);
    for (wrist, look) in plan {
        let f = render_frame(&pose_for(wrist, &jitter, scale), &look, style.size, jitter.background);
        frames.extend(f.pixels.iter().map(|&p| (p + rng.gen_range(-1.0..=1.0f32) * style.noise).clamp(0.0, 1.0)));
        keypoints.extend_from_slice(&f.keypoints);
    }
    Ok(Clip {
        id: format!("clip-{seed:016x}"),
        split: Split::Train,
        size: style.size,
        frames,
        keypoints,
        glosses: glosses.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Glosses per clip (inclusive).
    pub glosses_per_clip: (usize, usize),
    pub duration: (usize, usize),
    pub style: ClipStyle,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocab_size: 10,
            train: 50,
            dev: 10,
            test: 10,
            glosses_per_clip: (2, 4),
            duration: (4, 8),
            style: ClipStyle::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocabulary: Vec<String>,
    pub clips: Vec<Clip>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Gloss sequences with no immediate repeats.
fn sample_sequence(rng: &mut ChaCha8Rng, vocab: usize, range: (usize, usize)) -> Vec<usize> {
    let n = rng.gen_range(range.0..=range.1);
    let mut seq: Vec<usize> = Vec::with_capacity(n);
    while seq.len() < n {
        let g = rng.gen_range(0..vocab);
        if seq.last() != Some(&g) {
            seq.push(g);
        }
    }
    seq
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus, DataError> {
    let (lo, hi) = cfg.glosses_per_clip;
    if lo == 0 || lo > hi {
        return Err(DataError::Config(format!("glosses per clip {:?} invalid", cfg.glosses_per_clip)));
    }
    let inv = Inventory::new(cfg.vocab_size, cfg.duration)?;
    let mut clips = Vec::with_capacity(cfg.train + cfg.dev + cfg.test);
    for (si, (split, count)) in [(Split::Train, cfg.train), (Split::Dev, cfg.dev), (Split::Test, cfg.test)].into_iter().enumerate() {
        for i in 0..count {
            let seed = mix(cfg.seed ^ mix(((si as u64) << 32) | i as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = sample_sequence(&mut rng, inv.len(), cfg.glosses_per_clip);
            let mut clip = generate_clip(&inv, &seq, rng.gen(), &cfg.style)?;
            clip.id = format!("{}-{i:04}", split.name());
            clip.split = split;
            clips.push(clip);
        }
    }
    Ok(Corpus { vocabulary: inv.names(), clips })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbow_keeps_segment_length() {
        let s = [42.0, 34.0];
        let e = elbow_for(s, [70.0, 24.0]);
        let d = ((e[0] - s[0]).powi(2) + (e[1] - s[1]).powi(2)).sqrt();
        assert!((d - 22.0).abs() < 1e-3);
        assert!(e[1] < 34.0);
    }

    #[test]
    fn sequences_have_no_adjacent_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sample_sequence(&mut rng, 4, (2, 4));
            assert!(s.windows(2).all(|w| w[0] != w[1]));
            assert!((2..=4).contains(&s.len()));
        }
    }
}
