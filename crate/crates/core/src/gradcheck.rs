//! Finite-difference verification of the model-level gradients in f64:
//! CTC, BLSTM, keypoint regression and the full joint loss on a 2-frame
//! micro-model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmc_data::{Clip, Split, NUM_KEYPOINTS};
use stmc_tensor::gradcheck::{finite_difference_check, primitive_suite, GradCheckConfig, GradCheckReport};
use stmc_tensor::params::Bound;
use stmc_tensor::{NdArray, ParamStore, Tape, Var};

use crate::config::{ModelConfig, RunConfig};
use crate::ctc::ctc_loss_from_logits;
use crate::layers::{Blstm, Builder, Result};
use crate::loss::{batch_loss, regression_var};
use crate::model::Stmc;

/// Check `build`'s scalar output against central differences over every
/// parameter in `store`.
pub fn check_params<F>(name: &str, store: &ParamStore<f64>, build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let eval = |values: &[NdArray<f64>], grads: bool| -> Result<(f64, Vec<NdArray<f64>>)> {
        let mut s = store.clone();
        s.values_mut().clone_from_slice(values);
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape);
        let y = build(&mut tape, &bound)?;
        let v = tape.value(y).data()[0];
        if !grads {
            return Ok((v, Vec::new()));
        }
        tape.backward(y)?;
        Ok((v, s.gradients(&tape, &bound)))
    };
    let (_, analytic) = eval(store.values(), true)?;
    let objective = |xs: &[NdArray<f64>]| eval(xs, false).map(|r| r.0).unwrap_or(f64::NAN);
    Ok(finite_difference_check(name, objective, store.values(), &analytic, cfg))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> NdArray<f64> {
    let n: usize = shape.iter().product();
    NdArray::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape")
}

pub fn ctc_check(cfg: &GradCheckConfig) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc7c);
    let logits = random(&mut rng, &[6, 4], 2.0);
    let target = [1, 2, 2];
    let (_, grad) = ctc_loss_from_logits(logits.data(), 4, &target).expect("admissible");
    let analytic = NdArray::new(vec![6, 4], grad).expect("shape");
    finite_difference_check(
        "ctc_loss",
        |xs| ctc_loss_from_logits(xs[0].data(), 4, &target).map(|r| r.0).unwrap_or(f64::NAN),
        &[logits],
        &[analytic],
        cfg,
    )
}

pub fn blstm_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let enc = Blstm::new(&mut Builder::new(&mut store, cfg.seed), "enc", 3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb15);
    let x = random(&mut rng, &[4, 3], 1.0);
    let w = random(&mut rng, &[4, 5], 1.0);
    check_params(
        "blstm",
        &store.cast(),
        |tape, p| {
            let xv = tape.constant(x.clone());
            let y = enc.logits(tape, p, xv)?;
            let wv = tape.constant(w.clone());
            let prod = tape.mul(y, wv)?;
            Ok(tape.sum(prod))
        },
        cfg,
    )
}

pub fn regression_check(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e1);
    let mut store = ParamStore::new();
    // mix of errors on both sides of the smooth-L1 switch point
    let truth = NdArray::new(vec![2, 3, 2], (0..12).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("shape");
    let pred: Vec<f64> = truth.data().iter().map(|&t| t + rng.gen_range(-0.1..0.1)).collect();
    let id = store.add("pred", NdArray::new(vec![2, 3, 2], pred).expect("shape"));
    [crate::config::BetaMode::Inside, crate::config::BetaMode::Outside]
        .into_iter()
        .map(|mode| {
            check_params(
                &format!("smooth_l1_regression[{mode:?}]"),
                &store,
                |tape, p| regression_var(tape, p.var(id), &truth, 30.0, mode),
                cfg,
            )
        })
        .collect()
}

/// Tiny configuration whose full forward pass runs on two 16×16 frames.
pub fn micro_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model = ModelConfig {
        input_size: 16,
        backbone_channels: vec![2, 3, 3, 4],
        deconv_channels: 2,
        keypoints: NUM_KEYPOINTS,
        crop_hand: 2,
        crop_face: 1,
        cue_widths: [4, 2, 2, 2],
        tmc_blocks: 1,
        tmc_kernel: 3,
        tmc_width: 8,
        inter_hidden: 2,
        intra_hidden: 2,
    };
    c
}

/// A random 2-frame clip for the micro model.
pub fn micro_clip(seed: u64) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 16;
    Clip {
        id: "micro".into(),
        split: Split::Train,
        size: s,
        frames: (0..2 * 3 * s * s).map(|_| rng.gen_range(0.0..1.0)).collect(),
        keypoints: (0..2 * NUM_KEYPOINTS * 2).map(|_| rng.gen_range(0.1..0.9)).collect(),
        glosses: vec![1],
    }
}

/// Joint loss of the whole model (SMC, TMC, both encoder kinds, regression)
/// on a 2-frame clip and 3-label vocabulary.
pub fn joint_loss_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let run = micro_config();
    let (model, store) = Stmc::new(&run.model, 3, cfg.seed)?;
    let mut store = store.cast::<f64>();
    // small random biases keep ReLUs away from exact zeros
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb1a5);
    for v in store.values_mut() {
        if v.shape().len() == 1 {
            v.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let clip = micro_clip(cfg.seed);
    let truth = NdArray::new(vec![2, NUM_KEYPOINTS, 2], clip.keypoints.iter().map(|&v| v as f64).collect())?;
    let target = crate::train::target_of(&clip);
    check_params(
        "joint_loss(micro)",
        &store,
        |tape, p| {
            let outs = model.forward_clips(tape, p, &[&clip])?;
            Ok(batch_loss(tape, &outs, &[target.clone()], &[truth.clone()], &run.loss)?.0)
        },
        cfg,
    )
}

/// Every check: engine primitives, then the model-level gradients.
pub fn full_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = primitive_suite(cfg)?;
    out.push(ctc_check(cfg));
    out.push(blstm_check(cfg)?);
    out.extend(regression_check(cfg)?);
    out.push(joint_loss_check(cfg)?);
    Ok(out)
}
