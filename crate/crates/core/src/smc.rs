//! Spatial multi-cue module: backbone, pose head with soft-argmax, patch
//! cropping around predicted keypoints, and the four cue streams.

use stmc_data::render::{L_WRIST, NOSE, R_WRIST};
use stmc_tensor::params::Bound;
use stmc_tensor::{Real, Tape, Var};

use crate::config::ModelConfig;
use crate::layers::{Builder, Conv, Deconv, Dense, Result};
use crate::CoreError;

#[derive(Clone, Debug)]
pub struct Smc {
    pub cfg: ModelConfig,
    stages: Vec<Conv>,
    deconv: [Deconv; 2],
    heat: Conv,
    hand: [Conv; 2],
    face: [Conv; 2],
    pose: [Dense; 2],
}

/// Per-frame SMC results for a batch of `N` frames.
#[derive(Clone, Debug)]
pub struct SmcOutput {
    /// `[N, Cf]` cue features in (full, hand, face, pose) order.
    pub features: Var,
    /// `[N, K, 2]` normalized keypoints.
    pub keypoints: Var,
    pub mid: Var,
    pub top: Var,
    /// `[N, K, Hm, Wm]` pre-softmax heatmaps.
    pub heatmaps: Var,
}

/// 1-based continuous position on an `h×w` map of normalized coordinates.
pub fn to_map_coords(j: [f64; 2], h: usize, w: usize) -> [f64; 2] {
    [j[0] * (h as f64 - 1.0) + 1.0, j[1] * (w as f64 - 1.0) + 1.0]
}

/// 0-based top-left corner of a `size`-long window centred on the rounded
/// 1-based position `center`, clamped to stay inside `[0, extent)`.
pub fn crop_origin(center: f64, extent: usize, size: usize) -> usize {
    assert!(size <= extent && size > 0, "window {size} larger than map {extent}");
    let c0 = center.round() - 1.0;
    let start = c0 - ((size - 1) / 2) as f64;
    // `as` saturates, and NaN maps to 0
    (start.clamp(0.0, (extent - size) as f64)) as usize
}

impl Smc {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> Self {
        let bc = &cfg.backbone_channels;
        let [_, hand_w, face_w, pose_w] = cfg.cue_widths;
        let hand_c = hand_w / 2;
        b.scope("smc", |b| {
            let mut cin = 3;
            let stages = (0..4)
                .map(|i| {
                    let c = Conv::new(b, &format!("backbone.{i}"), cin, bc[i], 3, 2);
                    cin = bc[i];
                    c
                })
                .collect();
            let dc = cfg.deconv_channels;
            Smc {
                cfg: cfg.clone(),
                stages,
                deconv: [Deconv::new(b, "pose.deconv0", bc[3], dc), Deconv::new(b, "pose.deconv1", dc, dc)],
                heat: Conv::new(b, "pose.heat", dc, cfg.keypoints, 1, 1),
                hand: [Conv::new(b, "hand.0", bc[1], hand_c, 3, 1), Conv::new(b, "hand.1", hand_c, hand_c, 3, 2)],
                face: [Conv::new(b, "face.0", bc[1], face_w, 3, 1), Conv::new(b, "face.1", face_w, face_w, 3, 2)],
                pose: [
                    Dense::new(b, "posecue.0", 2 * cfg.keypoints, pose_w),
                    Dense::new(b, "posecue.1", pose_w, pose_w),
                ],
            }
        })
    }

    /// `[N,3,S,S]` frames → (mid map at S/4, top map at S/16).
    pub fn backbone<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, frames: Var) -> Result<(Var, Var)> {
        let mid = self.lower(tape, p, frames)?;
        let top = self.upper(tape, p, mid)?;
        Ok((mid, top))
    }

    /// Stages up to the mid map.
    pub fn lower<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, frames: Var) -> Result<Var> {
        let s = tape.shape(frames).to_vec();
        let size = self.cfg.input_size;
        if s.len() != 4 || s[1] != 3 || s[2] != size || s[3] != size {
            return Err(CoreError::Shape(format!("frames {s:?} do not match input size {size}")));
        }
        self.stages_relu(tape, p, frames, 0..2)
    }

    /// Remaining stages: mid map → top map.
    pub fn upper<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, mid: Var) -> Result<Var> {
        self.stages_relu(tape, p, mid, 2..4)
    }

    fn stages_relu<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, range: std::ops::Range<usize>) -> Result<Var> {
        let mut x = x;
        for stage in &self.stages[range] {
            let y = stage.apply(tape, p, x)?;
            x = tape.relu(y);
        }
        Ok(x)
    }

    /// Top map → `[N, K, Hm, Wm]` heatmap logits.
    pub fn pose_head<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, top: Var) -> Result<Var> {
        let mut x = top;
        for d in &self.deconv {
            let y = d.apply(tape, p, x)?;
            x = tape.relu(y);
        }
        self.heat.apply(tape, p, x)
    }

    /// Spatial softmax then soft-argmax: `[N, K, H, W]` → `[N, K, 2]`.
    pub fn keypoints<T: Real>(&self, tape: &mut Tape<T>, heatmaps: Var) -> Result<Var> {
        let probs = tape.spatial_softmax(heatmaps)?;
        Ok(tape.soft_argmax(probs)?)
    }

    /// Window origins for (left hand, right hand, face) per frame, from the
    /// keypoint values (no gradient flows through the positions).
    pub fn crop_origins<T: Real>(&self, tape: &Tape<T>, keypoints: Var) -> Result<[Vec<(usize, usize)>; 3]> {
        let mid = self.cfg.mid_size();
        let kp = tape.value(keypoints);
        let k = self.cfg.keypoints;
        let n = kp.len() / (2 * k);
        let at = |f: usize, j: usize, size: usize| {
            let base = (f * k + j) * 2;
            let c = to_map_coords([kp.data()[base].as_f64(), kp.data()[base + 1].as_f64()], mid, mid);
            (crop_origin(c[0], mid, size), crop_origin(c[1], mid, size))
        };
        let (hs, fs) = (self.cfg.crop_hand, self.cfg.crop_face);
        Ok([
            (0..n).map(|f| at(f, L_WRIST, hs)).collect(),
            (0..n).map(|f| at(f, R_WRIST, hs)).collect(),
            (0..n).map(|f| at(f, NOSE, fs)).collect(),
        ])
    }

    fn patch_stream<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, convs: &[Conv; 2], x: Var) -> Result<Var> {
        let mut x = x;
        for c in convs {
            let y = c.apply(tape, p, x)?;
            x = tape.relu(y);
        }
        Ok(tape.global_avg_pool2d(x)?)
    }

    /// (full, hand, face, pose) cue vectors concatenated to `[N, Cf]`.
    pub fn cue_streams<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        top: Var,
        left: Var,
        right: Var,
        face: Var,
        keypoints: Var,
    ) -> Result<Var> {
        let (ls, rs) = (tape.shape(left).to_vec(), tape.shape(right).to_vec());
        if ls != rs {
            return Err(CoreError::Shape(format!("hand patches differ: {ls:?} vs {rs:?}")));
        }
        let n = ls[0];
        let full = tape.global_avg_pool2d(top)?;
        // both hands through one shared stack
        let hands = tape.concat(&[left, right], 0)?;
        let hv = self.patch_stream(tape, p, &self.hand, hands)?;
        let hl = tape.slice(hv, 0, 0, n)?;
        let hr = tape.slice(hv, 0, n, n)?;
        let hand = tape.concat_channels(&[hl, hr])?;
        let face = self.patch_stream(tape, p, &self.face, face)?;
        let flat = tape.reshape(keypoints, &[n, 2 * self.cfg.keypoints])?;
        let mut pose = flat;
        for d in &self.pose {
            let y = d.apply(tape, p, pose)?;
            pose = tape.relu(y);
        }
        Ok(tape.concat_channels(&[full, hand, face, pose])?)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, frames: Var) -> Result<SmcOutput> {
        if tape.shape(frames).first() == Some(&0) {
            return Err(CoreError::Shape("empty video".into()));
        }
        let (mid, top) = self.backbone(tape, p, frames)?;
        let heatmaps = self.pose_head(tape, p, top)?;
        let keypoints = self.keypoints(tape, heatmaps)?;
        let [lo, ro, fo] = self.crop_origins(tape, keypoints)?;
        let (hs, fs) = (self.cfg.crop_hand, self.cfg.crop_face);
        let left = tape.crop(mid, &lo, (hs, hs))?;
        let right = tape.crop(mid, &ro, (hs, hs))?;
        let face = tape.crop(mid, &fo, (fs, fs))?;
        let features = self.cue_streams(tape, p, top, left, right, face, keypoints)?;
        Ok(SmcOutput { features, keypoints, mid, top, heatmaps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_coordinate_examples() {
        assert_eq!(to_map_coords([0.0, 0.0], 56, 56), [1.0, 1.0]);
        assert_eq!(to_map_coords([1.0, 1.0], 56, 56), [56.0, 56.0]);
        assert_eq!(to_map_coords([0.5, 0.5], 57, 57), [29.0, 29.0]);
    }

    #[test]
    fn crop_origins_clamp() {
        assert_eq!(crop_origin(-40.0, 56, 24), 0);
        assert_eq!(crop_origin(f64::INFINITY, 56, 24), 32);
        assert_eq!(crop_origin(f64::NEG_INFINITY, 56, 24), 0);
        assert_eq!(crop_origin(f64::NAN, 56, 24), 0);
        // centre 29 (1-based) of 57 with odd window 7: 0-based rows 25..=31 around 28
        assert_eq!(crop_origin(29.0, 57, 7), 25);
    }
}
