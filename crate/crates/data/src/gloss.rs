//! Gloss inventory: each gloss is a (hand glyph, face pattern, motion) triple.

use crate::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HandGlyph {
    Neutral,
    Disk,
    Square,
    Triangle,
    Ring,
    Cross,
}

impl HandGlyph {
    pub const SIGNING: [HandGlyph; 5] =
        [HandGlyph::Disk, HandGlyph::Square, HandGlyph::Triangle, HandGlyph::Ring, HandGlyph::Cross];

    pub fn color(self) -> [f32; 3] {
        match self {
            HandGlyph::Neutral => [0.6, 0.6, 0.6],
            HandGlyph::Disk => [0.92, 0.22, 0.2],
            HandGlyph::Square => [0.2, 0.8, 0.25],
            HandGlyph::Triangle => [0.2, 0.4, 0.95],
            HandGlyph::Ring => [0.95, 0.85, 0.1],
            HandGlyph::Cross => [0.85, 0.2, 0.85],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FacePattern {
    Neutral,
    Eyes,
    Bar,
    Mouth,
    Brows,
}

impl FacePattern {
    pub const SIGNING: [FacePattern; 4] = [FacePattern::Eyes, FacePattern::Bar, FacePattern::Mouth, FacePattern::Brows];
}

pub const NUM_MOTIONS: usize = 5;

/// Left-wrist trajectory on the 96-unit grid at phase `u` in [0, 1]. The
/// right wrist mirrors it, so every motion is left/right symmetric.
pub fn motion_path(motion: usize, u: f32) -> [f32; 2] {
    use std::f32::consts::TAU;
    match motion {
        0 => [62.0 - 9.0 * (TAU * u).cos(), 28.0 + 9.0 * (TAU * u).sin()],
        1 => [80.0 - 30.0 * u, 24.0],
        2 => [58.0, 38.0 - 24.0 * u],
        3 => [80.0 - 42.0 * u, 12.0 + 16.0 * u],
        4 => [52.0 + 7.0 * (2.0 * TAU * u).sin(), 14.0 + 14.0 * u],
        _ => panic!("motion id {motion} out of range"),
    }
}

/// Where the wrists sit when not signing.
pub const REST_WRIST: [f32; 2] = [84.0, 30.0];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlossSpec {
    pub id: usize,
    pub left: HandGlyph,
    pub right: HandGlyph,
    pub face: FacePattern,
    pub motion: usize,
    /// Inclusive frame-count range.
    pub duration: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inventory {
    pub glosses: Vec<GlossSpec>,
}

// (glyph, face, motion) per gloss. Pairs (2i, 2i+1) share a motion and
// differ by face only, hand only, or both.
const BASE: [(usize, usize, usize); 10] = [
    (0, 0, 0),
    (0, 1, 0),
    (1, 2, 1),
    (2, 2, 1),
    (3, 0, 2),
    (4, 3, 2),
    (2, 1, 3),
    (4, 1, 3),
    (1, 3, 4),
    (1, 0, 4),
];

pub const MIN_VOCAB: usize = 4;
pub const MAX_VOCAB: usize = HandGlyph::SIGNING.len() * FacePattern::SIGNING.len() * NUM_MOTIONS;

impl Inventory {
    /// The fixed confusable-pair inventory, extended with unused triples
    /// when more than ten glosses are requested.
    pub fn new(size: usize, duration: (usize, usize)) -> Result<Self, DataError> {
        if !(MIN_VOCAB..=MAX_VOCAB).contains(&size) {
            return Err(DataError::Config(format!("vocabulary size {size} outside [{MIN_VOCAB}, {MAX_VOCAB}]")));
        }
        if duration.0 < 4 || duration.0 > duration.1 {
            return Err(DataError::Config(format!("duration range {duration:?} must satisfy 4 <= min <= max")));
        }
        let mut triples: Vec<_> = BASE.iter().copied().take(size).collect();
        // walk motions fastest so consecutive extras share glyph and face
        'outer: for g in 0..HandGlyph::SIGNING.len() {
            for f in 0..FacePattern::SIGNING.len() {
                for m in 0..NUM_MOTIONS {
                    if triples.len() == size {
                        break 'outer;
                    }
                    if !triples.contains(&(g, f, m)) {
                        triples.push((g, f, m));
                    }
                }
            }
        }
        let glosses = triples
            .into_iter()
            .enumerate()
            .map(|(id, (g, f, m))| GlossSpec {
                id,
                left: HandGlyph::SIGNING[g],
                right: HandGlyph::SIGNING[g],
                face: FacePattern::SIGNING[f],
                motion: m,
                duration,
            })
            .collect();
        let inv = Inventory { glosses };
        inv.validate()?;
        Ok(inv)
    }

    pub fn len(&self) -> usize {
        self.glosses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glosses.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&GlossSpec, DataError> {
        self.glosses.get(id).ok_or(DataError::UnknownGloss(id))
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.len()).map(|i| format!("G{i:02}")).collect()
    }

    fn validate(&self) -> Result<(), DataError> {
        let mut face_only = false;
        let mut hand_only = false;
        for (i, a) in self.glosses.iter().enumerate() {
            if a.id != i || a.motion >= NUM_MOTIONS || a.left == HandGlyph::Neutral || a.face == FacePattern::Neutral {
                return Err(DataError::Config(format!("gloss {i} has out-of-range ids")));
            }
            for b in &self.glosses[i + 1..] {
                let same_hand = a.left == b.left && a.right == b.right;
                let same_motion = a.motion == b.motion;
                match (same_hand, a.face == b.face, same_motion) {
                    (true, true, true) => return Err(DataError::Config(format!("glosses {} and {} coincide", a.id, b.id))),
                    (true, false, true) => face_only = true,
                    (false, true, true) => hand_only = true,
                    _ => {}
                }
            }
        }
        if face_only && hand_only {
            Ok(())
        } else {
            Err(DataError::Config("inventory lacks a face-only or hand-only confusable pair".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_inventory_has_confusable_pairs() {
        let inv = Inventory::new(10, (4, 8)).unwrap();
        let g = &inv.glosses;
        assert_eq!((g[0].left, g[0].motion), (g[1].left, g[1].motion));
        assert_ne!(g[0].face, g[1].face);
        assert_eq!((g[2].face, g[2].motion), (g[3].face, g[3].motion));
        assert_ne!(g[2].left, g[3].left);
    }

    #[test]
    fn sizes_are_bounded() {
        assert!(Inventory::new(3, (4, 8)).is_err());
        assert!(Inventory::new(MAX_VOCAB + 1, (4, 8)).is_err());
        assert_eq!(Inventory::new(MAX_VOCAB, (4, 8)).unwrap().len(), MAX_VOCAB);
        assert_eq!(Inventory::new(17, (4, 8)).unwrap().len(), 17);
        assert!(Inventory::new(10, (3, 8)).is_err());
    }

    #[test]
    fn paths_stay_on_left_half() {
        for m in 0..NUM_MOTIONS {
            for i in 0..=20 {
                let p = motion_path(m, i as f32 / 20.0);
                assert!(p[1] < 47.5 && p[1] > 4.0 && p[0] > 4.0 && p[0] < 91.0, "{m} {p:?}");
            }
        }
    }
}
