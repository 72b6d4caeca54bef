//! Connectionist temporal classification in log space.

use stmc_tensor::{Real, Tape, Var};

use crate::vocab::{collapse, PosteriorSequence, BLANK};
use crate::CoreError;

/// Floor for log-probabilities of (near) impossible events.
pub const LOG_ZERO: f64 = -1e30;

pub fn safe_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_ZERO)
    } else {
        LOG_ZERO
    }
}

pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo <= LOG_ZERO {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Frames needed to emit `target`: one per label plus one blank between repeats.
pub fn required_steps(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_target(target: &[usize], steps: usize, labels: usize) -> Result<(), CoreError> {
    if let Some(&l) = target.iter().find(|&&l| l == BLANK || l >= labels) {
        return Err(CoreError::Label(format!("target label {l} outside 1..{labels}")));
    }
    let need = required_steps(target);
    if steps < need {
        return Err(CoreError::Inadmissible { steps, needed: need });
    }
    Ok(())
}

/// Forward and backward variables over the blank-interleaved target
/// `(−, ℓ1, −, ℓ2, …, −)`. `beta[t][s]` excludes the emission at `t`, so
/// `Σ_s alpha[t][s] + beta[t][s]` (in log space) is the same for every `t`.
#[derive(Clone, Debug)]
pub struct ForwardBackward {
    pub steps: usize,
    pub states: Vec<usize>,
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub log_likelihood: f64,
}

impl ForwardBackward {
    /// `log p(ℓ|o)` recomputed at cut point `t`.
    pub fn likelihood_at(&self, t: usize) -> f64 {
        let s = self.states.len();
        (0..s).fold(LOG_ZERO, |acc, i| log_add(acc, self.log_alpha[t * s + i] + self.log_beta[t * s + i]))
    }
}

/// `log_probs` is `[T, |V|]` row-major natural-log posteriors.
pub fn forward_backward(log_probs: &[f64], labels: usize, target: &[usize]) -> Result<ForwardBackward, CoreError> {
    if labels < 2 || log_probs.len() % labels != 0 || log_probs.is_empty() {
        return Err(CoreError::Shape(format!("{} log-probs for {labels} labels", log_probs.len())));
    }
    let steps = log_probs.len() / labels;
    check_target(target, steps, labels)?;
    let mut states = vec![BLANK; 2 * target.len() + 1];
    for (i, &l) in target.iter().enumerate() {
        states[2 * i + 1] = l;
    }
    let s = states.len();
    let lp = |t: usize, i: usize| log_probs[t * labels + states[i]].max(LOG_ZERO);
    // s may skip from i-2 to i when i is a label different from i-2's label
    let can_skip = |i: usize| i >= 2 && states[i] != BLANK && states[i] != states[i - 2];

    let mut alpha = vec![LOG_ZERO; steps * s];
    alpha[0] = lp(0, 0);
    if s > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..steps {
        for i in 0..s {
            let prev = &alpha[(t - 1) * s..t * s];
            let mut a = prev[i];
            if i >= 1 {
                a = log_add(a, prev[i - 1]);
            }
            if can_skip(i) {
                a = log_add(a, prev[i - 2]);
            }
            alpha[t * s + i] = if a <= LOG_ZERO { LOG_ZERO } else { a + lp(t, i) };
        }
    }

    let mut beta = vec![LOG_ZERO; steps * s];
    beta[(steps - 1) * s + s - 1] = 0.0;
    if s > 1 {
        beta[(steps - 1) * s + s - 2] = 0.0;
    }
    for t in (0..steps - 1).rev() {
        for i in 0..s {
            let next = |j: usize| beta[(t + 1) * s + j] + lp(t + 1, j);
            let mut b = next(i);
            if i + 1 < s {
                b = log_add(b, next(i + 1));
            }
            if i + 2 < s && can_skip(i + 2) {
                b = log_add(b, next(i + 2));
            }
            beta[t * s + i] = b.max(LOG_ZERO);
        }
    }
    let last = &alpha[(steps - 1) * s..];
    let mut ll = last[s - 1];
    if s > 1 {
        ll = log_add(ll, last[s - 2]);
    }
    Ok(ForwardBackward { steps, states, log_alpha: alpha, log_beta: beta, log_likelihood: ll })
}

/// `−ln p(ℓ|o)` for posterior probabilities.
pub fn ctc_loss(posteriors: &PosteriorSequence, target: &[usize]) -> Result<f64, CoreError> {
    let fb = forward_backward(&posteriors.log_data(), posteriors.labels(), target)?;
    Ok(-fb.log_likelihood)
}

/// Loss and its gradient with respect to pre-softmax `logits` `[T, |V|]`:
/// `softmax − occupancy`.
pub fn ctc_loss_from_logits(logits: &[f64], labels: usize, target: &[usize]) -> Result<(f64, Vec<f64>), CoreError> {
    if labels < 2 || logits.len() % labels != 0 {
        return Err(CoreError::Shape(format!("{} logits for {labels} labels", logits.len())));
    }
    let mut log_probs = logits.to_vec();
    for row in log_probs.chunks_mut(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|x| *x -= lse);
    }
    let fb = forward_backward(&log_probs, labels, target)?;
    let ll = fb.log_likelihood;
    if ll <= LOG_ZERO * 0.5 {
        return Err(CoreError::Numerical("CTC likelihood underflowed".into()));
    }
    let s = fb.states.len();
    let mut grad: Vec<f64> = log_probs.iter().map(|&l| l.exp()).collect();
    for t in 0..fb.steps {
        for i in 0..s {
            let g = fb.log_alpha[t * s + i] + fb.log_beta[t * s + i] - ll;
            if g > LOG_ZERO {
                grad[t * labels + fb.states[i]] -= g.exp();
            }
        }
    }
    Ok((-ll, grad))
}

/// CTC loss of `[T, |V|]` logits as a tape scalar.
pub fn ctc_loss_var<T: Real>(tape: &mut Tape<T>, logits: Var, target: &[usize]) -> Result<Var, CoreError> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(CoreError::Shape(format!("CTC expects [T, |V|] logits, got {shape:?}")));
    }
    let values = tape.value(logits).to_f64_vec();
    let (loss, grad) = ctc_loss_from_logits(&values, shape[1], target)?;
    let jac = grad.into_iter().map(T::from_f64_lossy).collect();
    Ok(tape.scalar_fn(logits, T::from_f64_lossy(loss), jac)?)
}

/// `p(ℓ|o)` by enumerating all |V|^T alignment paths.
pub fn ctc_brute_force(posteriors: &PosteriorSequence, target: &[usize]) -> Result<f64, CoreError> {
    let (steps, labels) = (posteriors.steps(), posteriors.labels());
    let paths = (labels as f64).powi(steps as i32);
    if paths > 1e7 {
        return Err(CoreError::TooLarge(format!("{labels}^{steps} paths")));
    }
    let mut path = vec![0usize; steps];
    let mut total = 0.0;
    loop {
        if collapse(&path) == target {
            total += path.iter().enumerate().map(|(t, &k)| posteriors.row(t)[k]).product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == steps {
                return Ok(total);
            }
            path[i] += 1;
            if path[i] < labels {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
