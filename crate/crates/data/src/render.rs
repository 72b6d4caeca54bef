//! Anti-aliased procedural drawing of the upper-body figure.
//!
//! Everything is laid out on a 96-unit reference grid and scaled to the
//! canvas, so the same inventory renders at any resolution.

use crate::gloss::{FacePattern, HandGlyph};

pub const NUM_KEYPOINTS: usize = 7;
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] =
    ["nose", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist"];
pub const NOSE: usize = 0;
pub const L_WRIST: usize = 5;
pub const R_WRIST: usize = 6;

/// Left/right partner of every keypoint id (used when mirroring).
pub const MIRROR_ID: [usize; NUM_KEYPOINTS] = [0, 2, 1, 4, 3, 6, 5];

pub(crate) const REF: f32 = 96.0;
pub(crate) const HEAD_RADIUS: f32 = 10.0;
pub(crate) const GLYPH_RADIUS: f32 = 6.0;

type Rgb = [f32; 3];

const SKIN: Rgb = [0.95, 0.80, 0.65];
const LIMB: Rgb = [0.82, 0.84, 0.90];

/// Pixel-space positions (row, col) of the seven joints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseState {
    pub joints: [[f32; 2]; NUM_KEYPOINTS],
}

/// What each visual cue carries in one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Appearance {
    pub left: HandGlyph,
    pub right: HandGlyph,
    pub face: FacePattern,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub size: usize,
    /// Channel-major `[3, S, S]`, values in [0, 1].
    pub pixels: Vec<f32>,
    /// `[K, 2]` normalized (row, col) coordinates.
    pub keypoints: Vec<f32>,
}

pub struct Canvas {
    size: usize,
    scale: f32,
    pixels: Vec<f32>,
}

impl Canvas {
    pub fn new(size: usize, background: Rgb) -> Self {
        let mut pixels = vec![0.0; 3 * size * size];
        for (c, plane) in pixels.chunks_mut(size * size).enumerate() {
            plane.fill(background[c]);
        }
        Canvas { size, scale: (size as f32 - 1.0) / (REF - 1.0), pixels }
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    /// Blend `color` with coverage derived from a signed distance (pixels).
    fn paint(&mut self, center: [f32; 2], reach: f32, color: Rgb, sdf: impl Fn(f32, f32) -> f32) {
        let s = self.size as isize;
        let lo = |v: f32| ((v - reach - 1.0).floor() as isize).clamp(0, s) as usize;
        let hi = |v: f32| ((v + reach + 2.0).ceil() as isize).clamp(0, s) as usize;
        let plane = self.size * self.size;
        for r in lo(center[0])..hi(center[0]) {
            for c in lo(center[1])..hi(center[1]) {
                let cov = (0.5 - sdf(r as f32 - center[0], c as f32 - center[1])).clamp(0.0, 1.0);
                if cov > 0.0 {
                    let i = r * self.size + c;
                    for (ch, &v) in color.iter().enumerate() {
                        let p = &mut self.pixels[ch * plane + i];
                        *p += cov * (v - *p);
                    }
                }
            }
        }
    }

    pub fn disk(&mut self, at: [f32; 2], radius: f32, color: Rgb) {
        self.paint(at, radius, color, |y, x| (y * y + x * x).sqrt() - radius);
    }

    pub fn ring(&mut self, at: [f32; 2], radius: f32, half_width: f32, color: Rgb) {
        self.paint(at, radius + half_width, color, |y, x| ((y * y + x * x).sqrt() - radius).abs() - half_width);
    }

    pub fn rect(&mut self, at: [f32; 2], half: [f32; 2], color: Rgb) {
        self.paint(at, half[0].max(half[1]), color, |y, x| box_sdf(y, x, half));
    }

    pub fn cross(&mut self, at: [f32; 2], arm: f32, half_width: f32, color: Rgb) {
        self.paint(at, arm, color, |y, x| {
            box_sdf(y, x, [arm, half_width]).min(box_sdf(y, x, [half_width, arm]))
        });
    }

    /// Upward equilateral triangle whose centroid sits at `at`.
    pub fn triangle(&mut self, at: [f32; 2], circumradius: f32, color: Rgb) {
        // edge normals (dy, dx) and inradius
        let inr = circumradius * 0.5;
        let s3 = 3f32.sqrt() * 0.5;
        let normals = [[1.0, 0.0], [-0.5, s3], [-0.5, -s3]];
        self.paint(at, circumradius, color, move |y, x| {
            normals.iter().map(|n| n[0] * y + n[1] * x - inr).fold(f32::MIN, f32::max)
        });
    }

    pub fn segment(&mut self, a: [f32; 2], b: [f32; 2], half_width: f32, color: Rgb) {
        let mid = [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = (d[0] * d[0] + d[1] * d[1]).max(1e-12);
        let reach = len2.sqrt() * 0.5 + half_width;
        let (oa, ob) = ([a[0] - mid[0], a[1] - mid[1]], d);
        self.paint(mid, reach, color, move |y, x| {
            let p = [y - oa[0], x - oa[1]];
            let t = ((p[0] * ob[0] + p[1] * ob[1]) / len2).clamp(0.0, 1.0);
            let q = [p[0] - t * ob[0], p[1] - t * ob[1]];
            (q[0] * q[0] + q[1] * q[1]).sqrt() - half_width
        });
    }

    pub fn hand(&mut self, at: [f32; 2], glyph: HandGlyph) {
        let r = GLYPH_RADIUS * self.scale;
        let color = glyph.color();
        match glyph {
            HandGlyph::Neutral => self.disk(at, 0.6 * r, color),
            HandGlyph::Disk => self.disk(at, r, color),
            HandGlyph::Square => self.rect(at, [0.85 * r; 2], color),
            HandGlyph::Triangle => self.triangle(at, 1.25 * r, color),
            HandGlyph::Ring => self.ring(at, 0.75 * r, 0.3 * r, color),
            HandGlyph::Cross => self.cross(at, r, 0.35 * r, color),
        }
    }

    /// Face markings; all stay strictly inside the head disk.
    pub fn face(&mut self, nose: [f32; 2], pattern: FacePattern) {
        let u = self.scale;
        let at = |dr: f32, dc: f32| [nose[0] + dr * u, nose[1] + dc * u];
        match pattern {
            FacePattern::Neutral => {}
            FacePattern::Eyes => {
                let c = [0.15, 0.25, 0.85];
                self.disk(at(-2.5, -4.0), 2.5 * u, c);
                self.disk(at(-2.5, 4.0), 2.5 * u, c);
            }
            FacePattern::Bar => self.segment(at(4.0, -5.0), at(4.0, 5.0), 1.8 * u, [0.85, 0.1, 0.1]),
            FacePattern::Mouth => self.ring(at(3.0, 0.0), 3.8 * u, 1.2 * u, [0.25, 0.1, 0.05]),
            FacePattern::Brows => {
                let c = [0.1, 0.6, 0.2];
                self.segment(at(-4.5, -6.0), at(-4.5, -1.5), 1.5 * u, c);
                self.segment(at(-4.5, 1.5), at(-4.5, 6.0), 1.5 * u, c);
            }
        }
    }
}

fn box_sdf(y: f32, x: f32, half: [f32; 2]) -> f32 {
    let qy = y.abs() - half[0];
    let qx = x.abs() - half[1];
    let outside = (qy.max(0.0).powi(2) + qx.max(0.0).powi(2)).sqrt();
    outside + qy.max(qx).min(0.0)
}

/// Draw the stick figure for one pose. Keypoints returned are exactly the
/// joint positions used for drawing, normalized by `size - 1`.
pub fn render_frame(pose: &PoseState, look: &Appearance, size: usize, background: [f32; 3]) -> Frame {
    let mut canvas = Canvas::new(size, background);
    let u = canvas.scale;
    let j = &pose.joints;
    let nose = j[NOSE];
    let neck = [nose[0] + HEAD_RADIUS * u, nose[1]];
    let base = [size as f32 - 1.0, nose[1]];
    canvas.segment(neck, base, 3.0 * u, LIMB);
    canvas.segment(j[1], j[2], 2.0 * u, LIMB);
    for (s, e, w) in [(1, 3, 5), (2, 4, 6)] {
        canvas.segment(j[s], j[e], 1.6 * u, LIMB);
        canvas.segment(j[e], j[w], 1.4 * u, LIMB);
    }
    canvas.disk(nose, HEAD_RADIUS * u, SKIN);
    canvas.face(nose, look.face);
    canvas.hand(j[L_WRIST], look.left);
    canvas.hand(j[R_WRIST], look.right);

    let norm = size as f32 - 1.0;
    let keypoints = j.iter().flat_map(|p| [p[0] / norm, p[1] / norm]).collect();
    Frame { size, pixels: canvas.into_pixels(), keypoints }
}
