//! Keypoint regression and the joint objective
//! `CTC(inter) + α·Σ_n CTC(intra_n) + regression`.

use stmc_tensor::{NdArray, Real, Tape, Var};

use crate::config::{BetaMode, LossConfig, NUM_CUES};
use crate::ctc::ctc_loss_var;
use crate::layers::Result;
use crate::model::ClipOutput;
use crate::CoreError;

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// `1/(2TK) Σ smoothL1(β·(J − Ĵ))` (or `β·smoothL1(J − Ĵ)` in outside mode)
/// over `[T, K, 2]` keypoint arrays.
pub fn smooth_l1_regression(pred: &[f64], truth: &[f64], frames: usize, beta: f64, mode: BetaMode) -> Result<f64> {
    if pred.len() != truth.len() || frames == 0 || pred.len() % (2 * frames) != 0 {
        return Err(CoreError::Shape(format!("{} predicted vs {} true coordinates over {frames} frames", pred.len(), truth.len())));
    }
    let denom = pred.len() as f64; // 2·T·K
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| match mode {
            BetaMode::Inside => smooth_l1(beta * (t - p)),
            BetaMode::Outside => beta * smooth_l1(t - p),
        })
        .sum();
    Ok(s / denom)
}

pub fn joint_loss(ctc_inter: f64, ctc_intra: &[f64], regression: f64, alpha: f64) -> f64 {
    ctc_inter + alpha * ctc_intra.iter().sum::<f64>() + regression
}

/// Tape version of [`smooth_l1_regression`]; `truth` is `[T, K, 2]`.
pub fn regression_var<T: Real>(tape: &mut Tape<T>, pred: Var, truth: &NdArray<T>, beta: f64, mode: BetaMode) -> Result<Var> {
    if tape.shape(pred) != truth.shape() {
        return Err(CoreError::Shape(format!("keypoints {:?} vs truth {:?}", tape.shape(pred), truth.shape())));
    }
    let n = truth.len() as f64;
    let j = tape.constant(truth.clone());
    let diff = tape.sub(j, pred)?;
    Ok(match mode {
        BetaMode::Inside => {
            let scaled = tape.scale(diff, T::from_f64_lossy(beta));
            let l = tape.smooth_l1(scaled);
            let s = tape.sum(l);
            tape.scale(s, T::from_f64_lossy(1.0 / n))
        }
        BetaMode::Outside => {
            let l = tape.smooth_l1(diff);
            let s = tape.sum(l);
            tape.scale(s, T::from_f64_lossy(beta / n))
        }
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossParts {
    pub ctc_inter: f64,
    pub ctc_intra: [f64; NUM_CUES],
    pub regression: f64,
    pub total: f64,
}

impl LossParts {
    pub fn mean(parts: &[LossParts]) -> LossParts {
        let n = parts.len().max(1) as f64;
        let mut m = LossParts::default();
        for p in parts {
            m.ctc_inter += p.ctc_inter / n;
            for (a, b) in m.ctc_intra.iter_mut().zip(p.ctc_intra) {
                *a += b / n;
            }
            m.regression += p.regression / n;
            m.total += p.total / n;
        }
        m
    }
}

/// Joint loss of one clip. With `alpha == 0` the intra-cue terms are still
/// evaluated for reporting but stay off the graph, so their encoders get no
/// gradient at all.
pub fn clip_loss<T: Real>(
    tape: &mut Tape<T>,
    out: &ClipOutput,
    target: &[usize],
    truth: &NdArray<T>,
    cfg: &LossConfig,
) -> Result<(Var, LossParts)> {
    let inter = ctc_loss_var(tape, out.inter_logits, target)?;
    let reg = regression_var(tape, out.keypoints, truth, cfg.beta, cfg.beta_mode)?;
    let mut parts = LossParts {
        ctc_inter: tape.value(inter).data()[0].as_f64(),
        regression: tape.value(reg).data()[0].as_f64(),
        ..Default::default()
    };
    let mut total = tape.add(inter, reg)?;
    for (n, &logits) in out.intra_logits.iter().enumerate() {
        if cfg.alpha == 0.0 {
            let shape = tape.shape(logits).to_vec();
            let v = tape.value(logits).to_f64_vec();
            parts.ctc_intra[n] = crate::ctc::ctc_loss_from_logits(&v, shape[1], target)?.0;
        } else {
            let l = ctc_loss_var(tape, logits, target)?;
            parts.ctc_intra[n] = tape.value(l).data()[0].as_f64();
            let w = tape.scale(l, T::from_f64_lossy(cfg.alpha));
            total = tape.add(total, w)?;
        }
    }
    parts.total = joint_loss(parts.ctc_inter, &parts.ctc_intra, parts.regression, cfg.alpha);
    Ok((total, parts))
}

/// Mean joint loss over a batch; `targets[i]` are label ids (gloss id + 1).
pub fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    outs: &[ClipOutput],
    targets: &[Vec<usize>],
    truths: &[NdArray<T>],
    cfg: &LossConfig,
) -> Result<(Var, Vec<LossParts>)> {
    if outs.is_empty() || outs.len() != targets.len() || outs.len() != truths.len() {
        return Err(CoreError::Shape("batch outputs, targets and truths differ in count".into()));
    }
    let mut total = None;
    let mut parts = Vec::with_capacity(outs.len());
    for ((o, t), j) in outs.iter().zip(targets).zip(truths) {
        let (l, p) = clip_loss(tape, o, t, j, cfg)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
        parts.push(p);
    }
    let mean = tape.scale(total.expect("non-empty batch"), T::from_f64_lossy(1.0 / outs.len() as f64));
    Ok((mean, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-1.0), 0.5);
    }

    #[test]
    fn regression_single_keypoint() {
        let r = smooth_l1_regression(&[0.0, 0.0], &[0.01, 0.02], 1, 30.0, BetaMode::Inside).unwrap();
        assert!((r - (0.045 + 0.18) / 2.0).abs() < 1e-12);
        assert_eq!(smooth_l1_regression(&[0.3; 4], &[0.3; 4], 1, 30.0, BetaMode::Inside).unwrap(), 0.0);
    }

    #[test]
    fn joint_examples() {
        assert!((joint_loss(1.0, &[0.5; 4], 0.2, 0.6) - 2.4).abs() < 1e-12);
        assert_eq!(joint_loss(1.0, &[0.5; 4], 0.2, 0.0), 1.2);
        assert_eq!(joint_loss(1.0, &[0.0; 4], 0.2, 0.6), joint_loss(1.0, &[0.0; 4], 0.2, 3.0));
    }
}
