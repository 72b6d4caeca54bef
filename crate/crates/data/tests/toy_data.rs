use stmc_data::augment::{crop, figure_bounds, CropRect};
use stmc_data::gloss::{FacePattern, HandGlyph};
use stmc_data::render::{render_frame, Appearance, Canvas, PoseState, L_WRIST, NOSE, R_WRIST};
use stmc_data::*;

fn pose() -> PoseState {
    PoseState {
        joints: [[24.0, 48.0], [42.0, 34.0], [42.0, 61.0], [55.0, 20.0], [55.0, 75.0], [66.0, 26.0], [66.0, 69.0]],
    }
}

fn look(inv: &Inventory, g: usize) -> Appearance {
    let s = &inv.glosses[g];
    Appearance { left: s.left, right: s.right, face: s.face }
}

fn near(a: [f32; 3], b: [f32; 3], tol: f32) -> bool {
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() < tol)
}

fn pixel(frame: &[f32], size: usize, r: usize, c: usize) -> [f32; 3] {
    std::array::from_fn(|ch| frame[ch * size * size + r * size + c])
}

/// Centroid (row, col) of pixels close to `color` within `radius` of `at`.
fn color_centroid(frame: &[f32], size: usize, at: [f32; 2], radius: f32, color: [f32; 3]) -> Option<[f32; 2]> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
    for r in 0..size {
        for c in 0..size {
            let d = ((r as f32 - at[0]).powi(2) + (c as f32 - at[1]).powi(2)).sqrt();
            if d <= radius && near(pixel(frame, size, r, c), color, 0.12) {
                sr += r as f32;
                sc += c as f32;
                n += 1.0;
            }
        }
    }
    (n > 0.0).then(|| [sr / n, sc / n])
}

#[test]
fn glyph_centroid_within_one_pixel_of_wrist() {
    for glyph in HandGlyph::SIGNING.into_iter().chain([HandGlyph::Neutral]) {
        for at in [[40.3, 30.7], [71.0, 12.5], [55.5, 55.5]] {
            let mut canvas = Canvas::new(96, [0.0; 3]);
            canvas.hand(at, glyph);
            let px = canvas.into_pixels();
            // coverage-weighted centroid on the red channel of a white-free glyph
            let (mut w, mut sr, mut sc) = (0.0, 0.0, 0.0);
            let color = glyph.color();
            for r in 0..96 {
                for c in 0..96 {
                    let cov = pixel(&px, 96, r, c)[0] / color[0];
                    w += cov;
                    sr += cov * r as f32;
                    sc += cov * c as f32;
                }
            }
            let (cr, cc) = (sr / w, sc / w);
            assert!(((cr - at[0]).powi(2) + (cc - at[1]).powi(2)).sqrt() < 1.0, "{glyph:?} {at:?} -> {cr},{cc}");
        }
    }
}

#[test]
fn face_only_pair_differs_only_inside_the_head() {
    let inv = Inventory::new(10, (4, 8)).unwrap();
    let p = pose();
    for (a, b) in [(0, 1), (8, 9)] {
        let fa = render_frame(&p, &look(&inv, a), 96, [0.1; 3]);
        let fb = render_frame(&p, &look(&inv, b), 96, [0.1; 3]);
        assert_eq!(fa.keypoints, fb.keypoints);
        let nose = p.joints[NOSE];
        let mut inside_diffs = 0;
        for r in 0..96 {
            for c in 0..96 {
                let differs = pixel(&fa.pixels, 96, r, c) != pixel(&fb.pixels, 96, r, c);
                let d = ((r as f32 - nose[0]).powi(2) + (c as f32 - nose[1]).powi(2)).sqrt();
                if d > 10.0 {
                    assert!(!differs, "pair ({a},{b}) differs at ({r},{c})");
                } else if differs {
                    inside_diffs += 1;
                }
            }
        }
        assert!(inside_diffs > 20);
    }
}

#[test]
fn hand_only_pair_differs_only_around_the_wrists() {
    let inv = Inventory::new(10, (4, 8)).unwrap();
    let p = pose();
    for (a, b) in [(2, 3), (6, 7)] {
        let fa = render_frame(&p, &look(&inv, a), 96, [0.1; 3]);
        let fb = render_frame(&p, &look(&inv, b), 96, [0.1; 3]);
        for r in 0..96 {
            for c in 0..96 {
                if pixel(&fa.pixels, 96, r, c) != pixel(&fb.pixels, 96, r, c) {
                    let d = [L_WRIST, R_WRIST]
                        .map(|w| ((r as f32 - p.joints[w][0]).powi(2) + (c as f32 - p.joints[w][1]).powi(2)).sqrt());
                    assert!(d[0].min(d[1]) <= 9.0, "pair ({a},{b}) differs at ({r},{c})");
                }
            }
        }
    }
}

#[test]
fn three_gloss_clip_length_bound() {
    let inv = Inventory::new(10, (4, 8)).unwrap();
    let style = ClipStyle { size: 32, ..ClipStyle::default() };
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..60 {
        let c = generate_clip(&inv, &[1, 5, 2], seed, &style).unwrap();
        assert!((12..=30).contains(&c.len()), "T = {}", c.len());
        seen.insert(c.len());
    }
    assert!(seen.len() > 4);
}

#[test]
fn empty_sequence_and_unknown_gloss_rejected() {
    let inv = Inventory::new(10, (4, 8)).unwrap();
    let style = ClipStyle::default();
    assert!(matches!(generate_clip(&inv, &[], 0, &style), Err(DataError::EmptyGlossSequence)));
    assert!(matches!(generate_clip(&inv, &[10], 0, &style), Err(DataError::UnknownGloss(10))));
}

#[test]
fn same_seed_is_bit_identical() {
    let inv = Inventory::new(10, (4, 8)).unwrap();
    let style = ClipStyle::default();
    let a = generate_clip(&inv, &[3, 4], 99, &style).unwrap();
    let b = generate_clip(&inv, &[3, 4], 99, &style).unwrap();
    let c = generate_clip(&inv, &[3, 4], 100, &style).unwrap();
    assert!(a.frames.iter().zip(&b.frames).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a, b);
    assert_ne!(a.frames, c.frames);
}

#[test]
fn keypoints_match_glyph_centres_on_every_frame() {
    let inv = Inventory::new(10, (4, 8)).unwrap();
    let style = ClipStyle::default();
    for (seed, seq) in [(1u64, vec![0, 3, 5]), (2, vec![4, 7, 9, 2]), (3, vec![6, 8])] {
        let clip = generate_clip(&inv, &seq, seed, &style).unwrap();
        let glyph = inv.glosses[seq[0]].left;
        for t in 0..clip.len() {
            let kp = clip.frame_keypoints(t);
            assert!(kp.iter().all(|v| (0.0..=1.0).contains(v)));
            let frame = clip.frame(t);
            for w in [L_WRIST, R_WRIST] {
                let at = [kp[2 * w] * 95.0, kp[2 * w + 1] * 95.0];
                // first-gloss frames carry its glyph; pixel colour check is skipped for the ring centre
                if t < 4 && glyph != HandGlyph::Ring {
                    let c = color_centroid(frame, 96, at, 8.0, glyph.color()).expect("glyph visible");
                    assert!(((c[0] - at[0]).powi(2) + (c[1] - at[1]).powi(2)).sqrt() < 1.0, "t={t} {c:?} {at:?}");
                }
            }
        }
    }
}

#[test]
fn transition_frames_carry_neutral_glyphs() {
    let inv = Inventory::new(10, (4, 4)).unwrap();
    let style = ClipStyle::default();
    for seed in 0..5 {
        let clip = generate_clip(&inv, &[2, 8], seed, &style).unwrap();
        let n = clip.len() - 8;
        assert!((1..=3).contains(&n));
        for t in 4..4 + n {
            let kp = clip.frame_keypoints(t);
            let at = [kp[2 * L_WRIST] * 95.0, kp[2 * L_WRIST + 1] * 95.0];
            let px = pixel(clip.frame(t), 96, at[0].round() as usize, at[1].round() as usize);
            assert!(near(px, HandGlyph::Neutral.color(), 0.05), "{px:?}");
            let nose = [kp[0] * 95.0, kp[1] * 95.0];
            assert!(color_centroid(clip.frame(t), 96, nose, 9.0, [0.85, 0.1, 0.1]).is_none());
        }
    }
}

#[test]
fn default_corpus_is_deterministic_and_sized() {
    let small = CorpusConfig { style: ClipStyle { size: 24, ..ClipStyle::default() }, ..CorpusConfig::default() };
    let a = generate_corpus(&small).unwrap();
    let b = generate_corpus(&small).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.clips.len(), 70);
    assert_eq!(a.split(Split::Train).count(), 50);
    assert_eq!(a.split(Split::Dev).count(), 10);
    assert_eq!(a.vocabulary.len(), 10);
    for c in &a.clips {
        assert!((2..=4).contains(&c.glosses.len()) && c.len() >= 4);
    }
    let other = generate_corpus(&CorpusConfig { seed: 1, ..small }).unwrap();
    assert_ne!(a.clips[0].frames, other.clips[0].frames);
}

fn small_clip(seq: &[usize], seed: u64) -> Clip {
    let inv = Inventory::new(10, (4, 8)).unwrap();
    generate_clip(&inv, seq, seed, &ClipStyle::default()).unwrap()
}

#[test]
fn forced_flip_twice_is_identity() {
    let clip = small_clip(&[4, 1], 5);
    let cfg = AugmentConfig { discard: 0.0, min_crop: 1.0, force_flip: Some(true), ..AugmentConfig::default() };
    let once = augment(&clip, 1, &cfg).clip;
    assert_ne!(once.frames, clip.frames);
    let twice = augment(&once, 2, &cfg).clip;
    assert_eq!(twice.frames, clip.frames);
    assert!(twice.keypoints.iter().zip(&clip.keypoints).all(|(a, b)| (a - b).abs() < 1e-6));
}

#[test]
fn flip_swaps_left_and_right_keypoints() {
    let clip = small_clip(&[2, 3], 8);
    let f = flip_clip(&clip);
    for t in 0..clip.len() {
        let (a, b) = (clip.frame_keypoints(t), f.frame_keypoints(t));
        assert_eq!(b[2 * L_WRIST], a[2 * R_WRIST]);
        assert!((b[2 * L_WRIST + 1] - (1.0 - a[2 * R_WRIST + 1])).abs() < 1e-7);
        assert!((b[1] - (1.0 - a[1])).abs() < 1e-7);
    }
}

#[test]
fn discard_keeps_about_eighty_percent() {
    let inv = Inventory::new(10, (8, 8)).unwrap();
    let style = ClipStyle { size: 16, ..ClipStyle::default() };
    let clip = generate_clip(&inv, &[0, 2, 4, 6, 8], 3, &style).unwrap();
    let cfg = AugmentConfig { min_crop: 1.0, ..AugmentConfig::default() };
    let (mut seen, mut kept) = (0usize, 0usize);
    let mut seed = 0;
    while seen < 10_000 {
        let out = augment(&clip, seed, &cfg);
        assert!(!out.skipped && out.clip.len() >= 4);
        seen += clip.len();
        kept += out.clip.len();
        seed += 1;
    }
    let frac = kept as f64 / seen as f64;
    assert!((frac - 0.8).abs() < 0.02, "kept fraction {frac}");
}

#[test]
fn crop_keeps_keypoints_on_the_drawn_glyphs() {
    let clip = small_clip(&[0, 5, 8], 11);
    for seed in 0..20 {
        let out = augment(&clip, seed, &AugmentConfig { discard: 0.0, force_flip: Some(false), ..Default::default() }).clip;
        assert!(out.keypoints.iter().all(|v| (0.0..=1.0).contains(v)));
        // first frame shows the disk glyph of gloss 0
        let kp = out.frame_keypoints(0);
        let at = [kp[2 * L_WRIST] * 95.0, kp[2 * L_WRIST + 1] * 95.0];
        let c = color_centroid(out.frame(0), 96, at, 9.0, HandGlyph::Disk.color()).expect("glyph visible");
        assert!(((c[0] - at[0]).powi(2) + (c[1] - at[1]).powi(2)).sqrt() < 1.0, "seed {seed}: {c:?} vs {at:?}");
    }
}

#[test]
fn crop_window_contains_figure() {
    let clip = small_clip(&[7, 3], 4);
    let (lo, hi) = figure_bounds(&clip);
    assert!(lo.iter().all(|&v| v >= 0.0) && hi.iter().all(|&v| v <= 95.0));
    let full = crop(&clip, CropRect { origin: [0.0, 0.0], side: 96.0 });
    assert_eq!(full.frames, clip.frames);
}

#[test]
fn short_clip_is_returned_unaugmented() {
    let inv = Inventory::new(10, (4, 4)).unwrap();
    let clip = generate_clip(&inv, &[1], 0, &ClipStyle::default()).unwrap();
    let out = augment(&clip, 0, &AugmentConfig::default());
    assert!(out.skipped);
    assert_eq!(out.clip, clip);
}

#[test]
fn face_patterns_are_left_right_symmetric() {
    for face in FacePattern::SIGNING {
        let mut c = Canvas::new(96, [0.0; 3]);
        c.face([30.0, 47.5], face);
        let px = c.into_pixels();
        for row in px.chunks(96) {
            for j in 0..48 {
                assert!((row[j] - row[95 - j]).abs() < 1e-5, "{face:?}");
            }
        }
    }
}
