//! Parameterized layers. Each holds parameter ids only; values live in a
//! `ParamStore` so the same model runs in f32 (training) and f64 (checking).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmc_tensor::params::Bound;
use stmc_tensor::{init, ConvTransposeSpec, NdArray, ParamId, ParamStore, Real, Tape, Var};

use crate::CoreError;

pub type Result<T> = std::result::Result<T, CoreError>;

/// Registers freshly initialized parameters under hierarchical names.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        Builder { store, rng: ChaCha8Rng::seed_from_u64(seed), prefix: String::new() }
    }

    /// Run `f` with `name.` appended to the parameter prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{name}.");
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn add(&mut self, name: &str, value: NdArray<f32>) -> ParamId {
        self.store.add(format!("{}{name}", self.prefix), value)
    }

    fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let v = init::fan_in_uniform(shape, fan_in, &mut self.rng);
        self.add(name, v)
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let v = init::uniform(shape, bound, &mut self.rng);
        self.add(name, v)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, init::zeros(shape))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        b.scope(name, |b| Conv {
            weight: b.fan_in("weight", &[cout, cin, k, k], cin * k * k),
            bias: b.zeros("bias", &[cout]),
            stride,
            pad: k / 2,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(tape.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)?)
    }
}

/// Stride-2 transposed convolution that exactly doubles the spatial size.
#[derive(Clone, Debug)]
pub struct Deconv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvTransposeSpec,
}

impl Deconv {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Self {
        let spec = ConvTransposeSpec::doubling();
        let k = spec.kernel;
        // each output pixel receives (k/stride)^2 taps per input channel
        let fan_in = cin * (k / spec.stride) * (k / spec.stride);
        b.scope(name, |b| Deconv {
            weight: b.fan_in("weight", &[cin, cout, k, k], fan_in),
            bias: b.zeros("bias", &[cout]),
            spec,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(tape.conv_transpose2d(x, p.var(self.weight), Some(p.var(self.bias)), self.spec)?)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Self {
        b.scope(name, |b| Dense { weight: b.fan_in("weight", &[cout, cin], cin), bias: b.zeros("bias", &[cout]) })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(tape.dense(x, p.var(self.weight), Some(p.var(self.bias)))?)
    }
}

/// Same-length temporal convolution over `[T, C]`.
#[derive(Clone, Debug)]
pub struct TConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl TConv {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        b.scope(name, |b| TConv { weight: b.fan_in("weight", &[cout, cin, k], cin * k), bias: b.zeros("bias", &[cout]) })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(tape.temporal_conv1d(x, p.var(self.weight), Some(p.var(self.bias)))?)
    }
}

/// Four-gate LSTM cell (gate order i, f, g, o) with a zero initial state.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(b: &mut Builder, name: &str, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        b.scope(name, |b| Lstm {
            w_ih: b.uniform("w_ih", &[4 * hidden, input], bound),
            w_hh: b.uniform("w_hh", &[4 * hidden, hidden], bound),
            bias: b.zeros("bias", &[4 * hidden]),
            hidden,
        })
    }

    /// Hidden states `[1, H]` in input time order; `reverse` scans right to left.
    pub fn run<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let steps = tape.shape(x)[0];
        let h = self.hidden;
        let xw = tape.dense(x, p.var(self.w_ih), Some(p.var(self.bias)))?;
        let mut out = vec![None; steps];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let mut z = tape.slice(xw, 0, t, 1)?;
            if let Some((h_prev, _)) = state {
                let r = tape.dense(h_prev, p.var(self.w_hh), None)?;
                z = tape.add(z, r)?;
            }
            let g = tape.split_channels(z, &[h, h, h, h])?;
            let (i, f, cand, o) = (tape.sigmoid(g[0]), tape.sigmoid(g[1]), tape.tanh(g[2]), tape.sigmoid(g[3]));
            let mut c = tape.mul(i, cand)?;
            if let Some((_, c_prev)) = state {
                let keep = tape.mul(f, c_prev)?;
                c = tape.add(keep, c)?;
            }
            let tc = tape.tanh(c);
            let h_t = tape.mul(o, tc)?;
            out[t] = Some(h_t);
            state = Some((h_t, c));
        }
        Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
    }
}

/// Bidirectional LSTM followed by a projection to label logits.
#[derive(Clone, Debug)]
pub struct Blstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
    pub proj: Dense,
}

impl Blstm {
    pub fn new(b: &mut Builder, name: &str, input: usize, hidden: usize, labels: usize) -> Self {
        b.scope(name, |b| Blstm {
            fwd: Lstm::new(b, "fwd", input, hidden),
            bwd: Lstm::new(b, "bwd", input, hidden),
            proj: Dense::new(b, "proj", 2 * hidden, labels),
        })
    }

    /// Concatenated `[T, 2H]` hidden states (forward half first).
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let hf = self.fwd.run(tape, p, x, false)?;
        let hb = self.bwd.run(tape, p, x, true)?;
        let rows = hf
            .into_iter()
            .zip(hb)
            .map(|(a, b)| tape.concat_channels(&[a, b]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(tape.concat(&rows, 0)?)
    }

    /// `[T, |V|]` pre-softmax logits.
    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.encode(tape, p, x)?;
        self.proj.apply(tape, p, h)
    }
}
