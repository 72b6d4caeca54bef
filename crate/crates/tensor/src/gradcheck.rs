//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::NdArray;
use crate::error::Result;
use crate::tape::{ConvTransposeSpec, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor: coordinates whose analytic and numeric gradients are
    /// both below this magnitude are compared on absolute error.
    pub abs_floor: f64,
    /// One-sided slopes disagreeing by more than this relative amount mark a
    /// nondifferentiable point (ReLU kink, max-pool tie), which is excluded.
    pub kink_tolerance: f64,
    /// Check at most this many coordinates per parameter (sampled).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, tolerance: 1e-4, abs_floor: 1e-6, kink_tolerance: 1e-2, max_coords: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub excluded_kinks: usize,
    pub max_rel_error: f64,
    /// Per-parameter maximum relative error.
    pub per_param: Vec<f64>,
    pub failures: Vec<CoordError>,
    /// `(param, index)` coordinates where the objective was not finite.
    pub non_finite: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.non_finite.is_empty() && self.checked > 0
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<24} {} max_rel_err={:.3e} checked={} excluded={}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.checked,
            self.excluded_kinks
        )?;
        if !self.non_finite.is_empty() {
            write!(f, " non_finite={}", self.non_finite.len())?;
        }
        if let Some(worst) = self.failures.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)) {
            write!(
                f,
                " worst=(param {}, index {}: analytic {:.6e}, numeric {:.6e})",
                worst.param, worst.index, worst.analytic, worst.numeric
            )?;
        }
        Ok(())
    }
}

/// Compare `analytic` gradients of `objective` at `params` with central
/// differences `(f(p+eps) - f(p-eps)) / (2 eps)`.
pub fn finite_difference_check<F>(
    name: &str,
    mut objective: F,
    params: &[NdArray<f64>],
    analytic: &[NdArray<f64>],
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&[NdArray<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut report = GradCheckReport { name: name.to_string(), per_param: vec![0.0; params.len()], ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<NdArray<f64>> = params.to_vec();
    let base = objective(&work);
    if !base.is_finite() {
        report.non_finite.push((usize::MAX, usize::MAX));
        return report;
    }
    for (p, grad) in analytic.iter().enumerate() {
        let n = params[p].len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + cfg.eps;
            let fp = objective(&work);
            work[p].data_mut()[i] = orig - cfg.eps;
            let fm = objective(&work);
            work[p].data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                report.non_finite.push((p, i));
                continue;
            }
            let forward = (fp - base) / cfg.eps;
            let backward = (base - fm) / cfg.eps;
            let slope_scale = forward.abs().max(backward.abs()).max(cfg.abs_floor);
            if (forward - backward).abs() > cfg.kink_tolerance * slope_scale {
                report.excluded_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            report.checked += 1;
            report.per_param[p] = report.per_param[p].max(rel);
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= cfg.tolerance {
                report.failures.push(CoordError { param: p, index: i, analytic: a, numeric, rel_error: rel });
            }
        }
    }
    report
}

/// Check a graph `build(tape, inputs) -> output` through the scalar objective
/// `Σ w ⊙ output` with fixed random weights `w`.
pub fn check_graph<B>(name: &str, inputs: Vec<NdArray<f64>>, build: B, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let y = build(&mut tape, &vars)?;
        let shape = tape.shape(y).to_vec();
        let n: usize = shape.iter().product();
        NdArray::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?
    };
    let eval = |xs: &[NdArray<f64>], grads: bool| -> Result<(f64, Vec<NdArray<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let y = build(&mut tape, &vars)?;
        let w = tape.constant(weights.clone());
        let prod = tape.mul(y, w)?;
        let s = tape.sum(prod);
        let value = tape.value(s).data()[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        tape.backward(s)?;
        let g = vars.iter().zip(xs).map(|(&v, x)| tape.grad(v).unwrap_or_else(|| NdArray::zeros(x.shape()))).collect();
        Ok((value, g))
    };
    let (_, analytic) = eval(&inputs, true)?;
    Ok(finite_difference_check(name, |xs| eval(xs, false).map(|r| r.0).unwrap_or(f64::NAN), &inputs, &analytic, cfg))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> NdArray<f64> {
    let n: usize = shape.iter().product();
    NdArray::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random values bounded away from zero, so ReLU-style kinks are not hit.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> NdArray<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    NdArray::new(shape.to_vec(), data).unwrap()
}

/// Finite-difference checks for every differentiable primitive of the engine.
pub fn primitive_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = &mut rng;
    let mut out = Vec::new();
    out.push(check_graph(
        "conv2d",
        vec![random(r, &[2, 2, 5, 5]), random(r, &[3, 2, 3, 3]), random(r, &[3])],
        |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1),
        cfg,
    )?);
    out.push(check_graph(
        "conv2d(stride 2)",
        vec![random(r, &[2, 6, 6]), random(r, &[2, 2, 3, 3])],
        |t, v| t.conv2d(v[0], v[1], None, 2, 1),
        cfg,
    )?);
    out.push(check_graph(
        "conv_transpose2d",
        vec![random(r, &[2, 3, 3, 3]), random(r, &[3, 2, 4, 4]), random(r, &[2])],
        |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), ConvTransposeSpec::doubling()),
        cfg,
    )?);
    out.push(check_graph(
        "temporal_conv1d",
        vec![random(r, &[7, 3]), random(r, &[4, 3, 5]), random(r, &[4])],
        |t, v| t.temporal_conv1d(v[0], v[1], Some(v[2])),
        cfg,
    )?);
    out.push(check_graph("temporal_maxpool", vec![random(r, &[9, 3])], |t, v| t.temporal_maxpool(v[0]), cfg)?);
    out.push(check_graph("maxpool2d", vec![random(r, &[2, 2, 4, 5])], |t, v| t.maxpool2d(v[0]), cfg)?);
    out.push(check_graph(
        "dense",
        vec![random(r, &[2, 3, 4]), random(r, &[5, 4]), random(r, &[5])],
        |t, v| t.dense(v[0], v[1], Some(v[2])),
        cfg,
    )?);
    out.push(check_graph("relu", vec![away_from_zero(r, &[4, 5])], |t, v| Ok(t.relu(v[0])), cfg)?);
    out.push(check_graph("sigmoid", vec![random(r, &[4, 5])], |t, v| Ok(t.sigmoid(v[0])), cfg)?);
    out.push(check_graph("tanh", vec![random(r, &[4, 5])], |t, v| Ok(t.tanh(v[0])), cfg)?);
    out.push(check_graph("add", vec![random(r, &[3, 4]), random(r, &[3, 4])], |t, v| t.add(v[0], v[1]), cfg)?);
    out.push(check_graph("sub", vec![random(r, &[3, 4]), random(r, &[3, 4])], |t, v| t.sub(v[0], v[1]), cfg)?);
    out.push(check_graph("mul", vec![random(r, &[3, 4]), random(r, &[3, 4])], |t, v| t.mul(v[0], v[1]), cfg)?);
    out.push(check_graph("mul(self)", vec![random(r, &[6])], |t, v| t.mul(v[0], v[0]), cfg)?);
    out.push(check_graph("scale", vec![random(r, &[3, 4])], |t, v| Ok(t.scale(v[0], -1.7)), cfg)?);
    out.push(check_graph("sum", vec![random(r, &[3, 4])], |t, v| Ok(t.sum(v[0])), cfg)?);
    out.push(check_graph("row_softmax", vec![random(r, &[3, 5])], |t, v| Ok(t.row_softmax(v[0])), cfg)?);
    out.push(check_graph("spatial_softmax", vec![random(r, &[2, 3, 4])], |t, v| t.spatial_softmax(v[0]), cfg)?);
    out.push(check_graph("global_avg_pool2d", vec![random(r, &[2, 3, 3, 4])], |t, v| t.global_avg_pool2d(v[0]), cfg)?);
    out.push(check_graph(
        "concat",
        vec![random(r, &[3, 2]), random(r, &[3, 3]), random(r, &[3, 1])],
        |t, v| t.concat_channels(v),
        cfg,
    )?);
    out.push(check_graph("slice", vec![random(r, &[4, 6])], |t, v| t.slice(v[0], 1, 2, 3), cfg)?);
    out.push(check_graph("reshape", vec![random(r, &[4, 6])], |t, v| t.reshape(v[0], &[2, 12]), cfg)?);
    out.push(check_graph(
        "crop",
        vec![random(r, &[2, 2, 6, 6])],
        |t, v| t.crop(v[0], &[(0, 3), (2, 1)], (3, 3)),
        cfg,
    )?);
    out.push(check_graph(
        "soft_argmax",
        vec![random(r, &[3, 4, 5])],
        |t, v| {
            let p = t.spatial_softmax(v[0])?;
            t.soft_argmax(p)
        },
        cfg,
    )?);
    out.push(check_graph(
        "smooth_l1",
        vec![NdArray::from_f64(&[6], &[-2.3, -0.7, -0.1, 0.2, 0.9, 1.8])?],
        |t, v| Ok(t.smooth_l1(v[0])),
        cfg,
    )?);
    Ok(out)
}
