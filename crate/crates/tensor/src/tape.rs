//! Wengert tape: every op appends a record holding its parents and whatever
//! it needs for the backward rule. Record order is a topological order, so
//! the backward sweep is a single reverse pass.

use std::cell::Cell;

use rayon::prelude::*;

use crate::array::NdArray;
use crate::error::{Result, TensorError};
use crate::kernels::{col2im, im2col, temporal_col2im, temporal_im2col, ConvGeom};
use crate::real::{gemm, Real};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op identity, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    ConvTranspose2d,
    TemporalConv1d,
    TemporalMaxPool,
    MaxPool2d,
    Dense,
    Relu,
    Sigmoid,
    Tanh,
    Add,
    Sub,
    Mul,
    Scale,
    Sum,
    RowSoftmax,
    GlobalAvgPool2d,
    Concat,
    Slice,
    Reshape,
    Crop,
    SoftArgmax,
    SmoothL1,
    ScalarFn,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::TemporalConv1d => "temporal_conv1d",
            OpKind::TemporalMaxPool => "temporal_maxpool",
            OpKind::MaxPool2d => "maxpool2d",
            OpKind::Dense => "dense",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::RowSoftmax => "row_softmax",
            OpKind::GlobalAvgPool2d => "global_avg_pool2d",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::Crop => "crop",
            OpKind::SoftArgmax => "soft_argmax",
            OpKind::SmoothL1 => "smooth_l1",
            OpKind::ScalarFn => "scalar_fn",
        }
    }
}

thread_local! {
    static FAULT: Cell<Option<OpKind>> = const { Cell::new(None) };
}

/// Corrupt the backward rule of one op kind on the current thread (its
/// upstream gradient is scaled by 1.5). Test fixture for the gradient checker.
#[doc(hidden)]
pub fn inject_backward_fault(kind: Option<OpKind>) {
    FAULT.with(|f| f.set(kind));
}

/// Configuration of a stride-2 transposed convolution that exactly doubles
/// spatial extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTransposeSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvTransposeSpec {
    pub fn new(kernel: usize, stride: usize, pad: usize, out_pad: usize) -> Result<Self> {
        if stride != 2 {
            return Err(TensorError::config("conv_transpose2d", format!("stride {stride} unsupported, only 2")));
        }
        if out_pad >= stride {
            return Err(TensorError::config("conv_transpose2d", "output padding must be below stride"));
        }
        // Output extent (H-1)·2 - 2p + k + op equals 2H for every H iff k + op - 2p = 2.
        if kernel + out_pad != 2 * pad + 2 {
            return Err(TensorError::config(
                "conv_transpose2d",
                format!("kernel {kernel}, pad {pad}, output padding {out_pad} do not double the input"),
            ));
        }
        Ok(ConvTransposeSpec { kernel, stride, pad, out_pad })
    }

    /// Kernel 4, padding 1.
    pub fn doubling() -> Self {
        ConvTransposeSpec { kernel: 4, stride: 2, pad: 1, out_pad: 0 }
    }

    pub fn output_extent(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel + self.out_pad - 2 * self.pad
    }
}

enum Op<T> {
    Leaf,
    // `cols` caches the unfolded input of every batch item.
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, batch: usize, cout: usize, geom: ConvGeom, cols: Vec<T> },
    // `geom` describes the adjoint cross-correlation from output back to input.
    ConvTranspose2d { input: Var, kernel: Var, bias: Option<Var>, batch: usize, cin: usize, geom: ConvGeom },
    TemporalConv1d { input: Var, kernel: Var, bias: Option<Var>, k: usize },
    TemporalMaxPool { input: Var, argmax: Vec<usize> },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Dense { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    RowSoftmax(Var),
    GlobalAvgPool2d(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Crop { input: Var, origins: Vec<(usize, usize)> },
    SoftArgmax(Var),
    SmoothL1(Var),
    ScalarFn { input: Var, jacobian: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::TemporalConv1d { .. } => OpKind::TemporalConv1d,
            Op::TemporalMaxPool { .. } => OpKind::TemporalMaxPool,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Dense { .. } => OpKind::Dense,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::RowSoftmax(_) => OpKind::RowSoftmax,
            Op::GlobalAvgPool2d(_) => OpKind::GlobalAvgPool2d,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Crop { .. } => OpKind::Crop,
            Op::SoftArgmax(_) => OpKind::SoftArgmax,
            Op::SmoothL1(_) => OpKind::SmoothL1,
            Op::ScalarFn { .. } => OpKind::ScalarFn,
        }
    }
}

/// Computation record list plus per-node values and gradients.
///
/// A tape is single-owner; build a fresh one per forward pass.
pub struct Tape<T: Real> {
    values: Vec<NdArray<T>>,
    grads: Vec<Option<Vec<T>>>,
    needs_grad: Vec<bool>,
    ops: Vec<Op<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn split_batch(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::shape(op, format!("expected [C,H,W] or [N,C,H,W], got {:?}", shape))),
    }
}

fn with_spatial(shape: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    if shape.len() == 3 {
        vec![c, h, w]
    } else {
        vec![shape[0], c, h, w]
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), grads: Vec::new(), needs_grad: Vec::new(), ops: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: NdArray<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.needs_grad.push(needs_grad);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    /// Record an input. Gradients accumulate on leaves with `requires_grad`.
    pub fn leaf(&mut self, value: NdArray<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: NdArray<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &NdArray<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<NdArray<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| NdArray::new(self.values[v.0].shape().to_vec(), g.clone()).expect("grad matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ----- convolution family -----

    /// 2-D cross-correlation of `[C_in,H,W]` (or batched `[N,C_in,H,W]`) with a
    /// `[C_out,C_in,k,k]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = split_batch(self.shape(input), "conv2d")?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 || ks[2] != ks[3] {
            return Err(TensorError::shape("conv2d", format!("kernel must be [C_out,C_in,k,k], got {:?}", ks)));
        }
        if ks[1] != cin {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {} channels but kernel expects {}", cin, ks[1]),
            ));
        }
        let cout = ks[0];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::shape("conv2d", format!("bias shape {:?} != [{}]", self.shape(b), cout)));
            }
        }
        let geom = ConvGeom::new(cin, h, w, ks[2], stride, pad).ok_or_else(|| {
            TensorError::shape("conv2d", format!("kernel {} stride {} pad {} invalid for {}x{}", ks[2], stride, pad, h, w))
        })?;
        let hw = geom.col_cols();
        let mut out = vec![T::zero(); n * cout * hw];
        let block = geom.col_rows() * hw;
        let mut cols = vec![T::zero(); n * block];
        {
            let x = self.values[input.0].data();
            let kd = self.values[kernel.0].data();
            out.par_chunks_mut(cout * hw).zip(cols.par_chunks_mut(block)).enumerate().for_each(|(b, (o, c))| {
                im2col(&x[b * cin * h * w..], &geom, c);
                gemm(false, false, cout, hw, geom.col_rows(), T::one(), kd, c, T::zero(), o);
            });
            if let Some(bv) = bias {
                let bd = self.values[bv.0].data();
                for b in 0..n {
                    for c in 0..cout {
                        out[(b * cout + c) * hw..(b * cout + c + 1) * hw].iter_mut().for_each(|v| *v += bd[c]);
                    }
                }
            }
        }
        let shape = with_spatial(self.shape(input), cout, geom.out_h, geom.out_w);
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let needs = self.any_needs(&parents);
        Ok(self.push(NdArray::new(shape, out)?, Op::Conv2d { input, kernel, bias, batch: n, cout, geom, cols }, needs))
    }

    /// Transposed convolution with a `[C_in,C_out,k,k]` kernel; the adjoint of
    /// the matching strided `conv2d`.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: ConvTransposeSpec) -> Result<Var> {
        let (n, cin, h, w) = split_batch(self.shape(input), "conv_transpose2d")?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 4 || ks[2] != ks[3] || ks[2] != spec.kernel {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("kernel must be [C_in,C_out,{k},{k}], got {:?}", ks, k = spec.kernel),
            ));
        }
        if ks[0] != cin {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("input has {} channels but kernel expects {}", cin, ks[0]),
            ));
        }
        let cout = ks[1];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::shape("conv_transpose2d", "bias shape mismatch"));
            }
        }
        let (oh, ow) = (spec.output_extent(h), spec.output_extent(w));
        let geom = ConvGeom::new(cout, oh, ow, spec.kernel, spec.stride, spec.pad)
            .ok_or_else(|| TensorError::config("conv_transpose2d", "invalid geometry"))?;
        debug_assert_eq!((geom.out_h, geom.out_w), (h, w));
        let hw = h * w;
        let mut out = vec![T::zero(); n * cout * oh * ow];
        {
            let x = self.values[input.0].data();
            let kd = self.values[kernel.0].data();
            out.par_chunks_mut(cout * oh * ow).enumerate().for_each(|(b, o)| {
                let mut cols = vec![T::zero(); geom.col_rows() * hw];
                gemm(true, false, geom.col_rows(), hw, cin, T::one(), kd, &x[b * cin * hw..], T::zero(), &mut cols);
                col2im(&cols, &geom, o);
            });
            if let Some(bv) = bias {
                let bd = self.values[bv.0].data();
                for b in 0..n {
                    for c in 0..cout {
                        let plane = &mut out[(b * cout + c) * oh * ow..(b * cout + c + 1) * oh * ow];
                        plane.iter_mut().for_each(|v| *v += bd[c]);
                    }
                }
            }
        }
        let shape = with_spatial(self.shape(input), cout, oh, ow);
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let needs = self.any_needs(&parents);
        Ok(self.push(NdArray::new(shape, out)?, Op::ConvTranspose2d { input, kernel, bias, batch: n, cin, geom }, needs))
    }

    /// Same-length temporal convolution of `[T,C_in]` with a `[C_out,C_in,k]`
    /// kernel (odd `k`, zero padding `(k-1)/2`).
    pub fn temporal_conv1d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 2 || ks.len() != 3 {
            return Err(TensorError::shape("temporal_conv1d", format!("input {:?}, kernel {:?}", xs, ks)));
        }
        let (t, cin) = (xs[0], xs[1]);
        let (cout, kcin, k) = (ks[0], ks[1], ks[2]);
        if k % 2 == 0 {
            return Err(TensorError::config("temporal_conv1d", format!("kernel size {k} must be odd")));
        }
        if kcin != cin {
            return Err(TensorError::shape(
                "temporal_conv1d",
                format!("input has {} channels but kernel expects {}", cin, kcin),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::shape("temporal_conv1d", "bias shape mismatch"));
            }
        }
        let mut cols = vec![T::zero(); t * cin * k];
        temporal_im2col(self.values[input.0].data(), t, cin, k, &mut cols);
        let mut out = vec![T::zero(); t * cout];
        gemm(false, true, t, cout, cin * k, T::one(), &cols, self.values[kernel.0].data(), T::zero(), &mut out);
        if let Some(b) = bias {
            let bd = self.values[b.0].data();
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(bd).for_each(|(v, &bb)| *v += bb);
            }
        }
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let needs = self.any_needs(&parents);
        Ok(self.push(NdArray::new(vec![t, cout], out)?, Op::TemporalConv1d { input, kernel, bias, k }, needs))
    }

    /// Max over non-overlapping pairs of time steps; a trailing odd step is dropped.
    pub fn temporal_maxpool(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 || xs[0] < 2 {
            return Err(TensorError::shape("temporal_maxpool", format!("need [T>=2, C], got {:?}", xs)));
        }
        let (t, c) = (xs[0] / 2, xs[1]);
        let x = self.values[input.0].data();
        let mut out = Vec::with_capacity(t * c);
        let mut argmax = Vec::with_capacity(t * c);
        for ti in 0..t {
            for ci in 0..c {
                let a = (2 * ti) * c + ci;
                let b = a + c;
                let pick = if x[b] > x[a] { b } else { a };
                out.push(x[pick]);
                argmax.push(pick);
            }
        }
        let needs = self.needs_grad[input.0];
        Ok(self.push(NdArray::new(vec![t, c], out)?, Op::TemporalMaxPool { input, argmax }, needs))
    }

    /// 2×2, stride-2 spatial max pool over `[C,H,W]` or `[N,C,H,W]`.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = split_batch(self.shape(input), "maxpool2d")?;
        if h < 2 || w < 2 {
            return Err(TensorError::shape("maxpool2d", format!("spatial extent {h}x{w} below 2")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.values[input.0].data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = with_spatial(self.shape(input), c, oh, ow);
        let needs = self.needs_grad[input.0];
        Ok(self.push(NdArray::new(shape, out)?, Op::MaxPool2d { input, argmax }, needs))
    }

    // ----- dense and elementwise -----

    /// Affine map `x·Wᵀ + b` over the trailing dimension; `weight` is `[C_out,C_in]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 {
            return Err(TensorError::shape("dense", format!("weight must be 2-D, got {:?}", ws)));
        }
        let (cout, cin) = (ws[0], ws[1]);
        if xs.last() != Some(&cin) {
            return Err(TensorError::shape("dense", format!("input {:?} has trailing extent != {}", xs, cin)));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::shape("dense", format!("bias {:?} != [{}]", self.shape(b), cout)));
            }
        }
        let m = self.values[input.0].len() / cin;
        let mut out = vec![T::zero(); m * cout];
        gemm(false, true, m, cout, cin, T::one(), self.values[input.0].data(), self.values[weight.0].data(), T::zero(), &mut out);
        if let Some(b) = bias {
            let bd = self.values[b.0].data();
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(bd).for_each(|(v, &bb)| *v += bb);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        let needs = self.any_needs(&parents);
        Ok(self.push(NdArray::new(shape, out)?, Op::Dense { input, weight, bias }, needs))
    }

    fn unary(&mut self, input: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let x = &self.values[input.0];
        let out = NdArray::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).unwrap();
        let needs = self.needs_grad[input.0];
        self.push(out, op, needs)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.unary(input, Op::Relu(input), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Op::Sigmoid(input), |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, Op::Tanh(input), |v| v.tanh())
    }

    pub fn scale(&mut self, input: Var, c: T) -> Var {
        self.unary(input, Op::Scale(input, c), |v| v * c)
    }

    /// Elementwise smooth-L1: `0.5x²` for `|x| < 1`, else `|x| - 0.5`.
    pub fn smooth_l1(&mut self, input: Var) -> Var {
        let half = T::from_f64_lossy(0.5);
        self.unary(input, Op::SmoothL1(input), |v| if v.abs() < T::one() { half * v * v } else { v.abs() - half })
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if x.shape() != y.shape() {
            return Err(TensorError::shape(name, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = NdArray::new(x.shape().to_vec(), data)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |p, q| p * q)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.values[input.0].data().iter().copied().sum();
        let needs = self.needs_grad[input.0];
        self.push(NdArray::scalar(s), Op::Sum(input), needs)
    }

    /// Numerically stable softmax over the trailing dimension.
    pub fn row_softmax(&mut self, input: Var) -> Var {
        let x = &self.values[input.0];
        let c = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let out = NdArray::new(x.shape().to_vec(), out).unwrap();
        let needs = self.needs_grad[input.0];
        self.push(out, Op::RowSoftmax(input), needs)
    }

    /// Softmax over the last two (spatial) dimensions of each map.
    pub fn spatial_softmax(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::shape("spatial_softmax", format!("need [..., H, W], got {:?}", shape)));
        }
        let hw = shape[shape.len() - 2] * shape[shape.len() - 1];
        let rows = self.values[input.0].len() / hw;
        let flat = self.reshape(input, &[rows, hw])?;
        let p = self.row_softmax(flat);
        self.reshape(p, &shape)
    }

    /// Per-channel spatial mean: `[C,H,W] -> [C]`, `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool2d(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (_, _, h, w) = split_batch(&shape, "global_avg_pool2d")?;
        let hw = h * w;
        let inv = T::one() / T::from_usize(hw).unwrap();
        let out: Vec<T> = self.values[input.0].data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out_shape = shape[..shape.len() - 2].to_vec();
        let needs = self.needs_grad[input.0];
        Ok(self.push(NdArray::new(out_shape, out)?, Op::GlobalAvgPool2d(input), needs))
    }

    // ----- structural -----

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .values
            .get(parts.first().ok_or_else(|| TensorError::shape("concat", "no parts"))?.0)
            .unwrap()
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} out of range for {:?}", first)));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let same = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(TensorError::shape("concat", format!("{:?} incompatible with {:?} on axis {}", s, first, axis)));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = &self.values[p.0];
                let blk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let needs = self.any_needs(parts);
        Ok(self.push(NdArray::new(shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, needs))
    }

    /// Concatenate along the trailing (feature channel) dimension.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let axis = parts.first().map(|p| self.shape(*p).len().saturating_sub(1)).unwrap_or(0);
        self.concat(parts, axis)
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::shape("slice", format!("[{start}, {}) on axis {axis} of {:?}", start + len, shape)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.values[input.0].data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let needs = self.needs_grad[input.0];
        Ok(self.push(NdArray::new(oshape, out)?, Op::Slice { input, axis, start }, needs))
    }

    /// Split along the trailing dimension into consecutive segments of the given widths.
    pub fn split_channels(&mut self, input: Var, widths: &[usize]) -> Result<Vec<Var>> {
        let axis = self.shape(input).len() - 1;
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice(input, axis, start, w)?);
            start += w;
        }
        if start != self.shape(input)[axis] {
            return Err(TensorError::shape("split_channels", format!("widths {:?} do not cover {:?}", widths, self.shape(input))));
        }
        Ok(out)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let v = self.values[input.0].clone().reshape(shape)?;
        let needs = self.needs_grad[input.0];
        Ok(self.push(v, Op::Reshape(input), needs))
    }

    /// Copy an `h×w` window per batch item from `[N,C,H,W]`; `origins[n]` is the
    /// 0-based top-left corner. Gradient flows to the cropped region only.
    pub fn crop(&mut self, input: Var, origins: &[(usize, usize)], size: (usize, usize)) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (n, c, h, w) = split_batch(&shape, "crop")?;
        if shape.len() != 4 || origins.len() != n {
            return Err(TensorError::shape("crop", format!("{} origins for shape {:?}", origins.len(), shape)));
        }
        let (ch, cw) = size;
        if ch == 0 || cw == 0 || ch > h || cw > w {
            return Err(TensorError::shape("crop", format!("window {ch}x{cw} does not fit {h}x{w}")));
        }
        if origins.iter().any(|&(r, q)| r + ch > h || q + cw > w) {
            return Err(TensorError::shape("crop", "window crosses the map border"));
        }
        let x = self.values[input.0].data();
        let mut out = Vec::with_capacity(n * c * ch * cw);
        for (b, &(r0, c0)) in origins.iter().enumerate() {
            for ci in 0..c {
                let plane = &x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                for i in 0..ch {
                    out.extend_from_slice(&plane[(r0 + i) * w + c0..(r0 + i) * w + c0 + cw]);
                }
            }
        }
        let needs = self.needs_grad[input.0];
        Ok(self.push(NdArray::new(vec![n, c, ch, cw], out)?, Op::Crop { input, origins: origins.to_vec() }, needs))
    }

    /// Expected normalized coordinates of probability maps `[..., H, W] -> [..., 2]`:
    /// first component `Σ p·i/(H-1)`, second `Σ p·j/(W-1)` with 0-based `i`, `j`.
    /// A degenerate axis of extent 1 contributes coordinate 0.
    pub fn soft_argmax(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::shape("soft_argmax", format!("need [..., H, W], got {:?}", shape)));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let (sx, sy) = axis_scales::<T>(h, w);
        let mut out = Vec::new();
        for map in self.values[input.0].data().chunks(h * w) {
            let (mut ex, mut ey) = (T::zero(), T::zero());
            for i in 0..h {
                for j in 0..w {
                    let p = map[i * w + j];
                    ex += p * T::from_usize(i).unwrap() * sx;
                    ey += p * T::from_usize(j).unwrap() * sy;
                }
            }
            out.push(ex);
            out.push(ey);
        }
        let mut oshape = shape[..shape.len() - 2].to_vec();
        oshape.push(2);
        let needs = self.needs_grad[input.0];
        Ok(self.push(NdArray::new(oshape, out)?, Op::SoftArgmax(input), needs))
    }

    /// Scalar `value` whose gradient with respect to `input` was computed by the
    /// caller (e.g. a dynamic-programming loss evaluated off-tape).
    pub fn scalar_fn(&mut self, input: Var, value: T, jacobian: Vec<T>) -> Result<Var> {
        if jacobian.len() != self.values[input.0].len() {
            return Err(TensorError::shape("scalar_fn", "jacobian length differs from input"));
        }
        let needs = self.needs_grad[input.0];
        Ok(self.push(NdArray::scalar(value), Op::ScalarFn { input, jacobian }, needs))
    }

    // ----- backward -----

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across calls;
    /// interior gradients are recomputed.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.values[root.0].len() != 1 {
            return Err(TensorError::NonScalarRoot(self.values[root.0].shape().to_vec()));
        }
        for (i, op) in self.ops.iter().enumerate() {
            if !matches!(op, Op::Leaf) {
                self.grads[i] = None;
            }
        }
        if !self.needs_grad[root.0] {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![T::one()]);
        let fault = FAULT.with(|f| f.get());
        for i in (0..=root.0).rev() {
            if matches!(self.ops[i], Op::Leaf) || !self.needs_grad[i] {
                continue;
            }
            let Some(mut g) = self.grads[i].take() else { continue };
            if fault == Some(self.ops[i].kind()) {
                let f = T::from_f64_lossy(1.5);
                g.iter_mut().for_each(|v| *v *= f);
            }
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[T]) {
        let values = &self.values;
        let needs = &self.needs_grad;
        let grads = &mut self.grads;
        // Parents always precede `i`; a parent buffer is taken out, updated and
        // put back, so repeated parents (e.g. `mul(a, a)`) accumulate correctly.
        macro_rules! acc {
            ($v:expr, |$d:ident| $body:block) => {
                if needs[$v.0] {
                    let mut buf = grads[$v.0].take().unwrap_or_else(|| vec![T::zero(); values[$v.0].len()]);
                    {
                        let $d: &mut [T] = &mut buf;
                        $body
                    }
                    grads[$v.0] = Some(buf);
                }
            };
        }
        let out = &values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, batch, cout, geom, cols } => {
                let (n, cout, geom) = (*batch, *cout, *geom);
                let hw = geom.col_cols();
                let block = geom.col_rows() * hw;
                let kd = values[kernel.0].data();
                let img = geom.channels * geom.in_h * geom.in_w;
                acc!(*kernel, |dk| {
                    batch_reduce(n, dk, |b, part| {
                        gemm(false, true, cout, geom.col_rows(), hw, T::one(), &g[b * cout * hw..], &cols[b * block..], T::one(), part);
                    });
                });
                acc!(*input, |dx| {
                    dx.par_chunks_mut(img).enumerate().for_each(|(b, dxb)| {
                        let mut dcols = vec![T::zero(); block];
                        gemm(true, false, geom.col_rows(), hw, cout, T::one(), kd, &g[b * cout * hw..], T::zero(), &mut dcols);
                        col2im(&dcols, &geom, dxb);
                    });
                });
                if let Some(bv) = bias {
                    acc!(*bv, |db| {
                        for b in 0..n {
                            for c in 0..cout {
                                db[c] += g[(b * cout + c) * hw..(b * cout + c + 1) * hw].iter().copied().sum::<T>();
                            }
                        }
                    });
                }
            }
            Op::ConvTranspose2d { input, kernel, bias, batch, cin, geom } => {
                let (n, cin, geom) = (*batch, *cin, *geom);
                let hw = geom.col_cols();
                let cout = geom.channels;
                let oimg = cout * geom.in_h * geom.in_w;
                let x = values[input.0].data();
                let kd = values[kernel.0].data();
                let rows = geom.col_rows();
                acc!(*input, |dx| {
                    dx.par_chunks_mut(cin * hw).enumerate().for_each(|(b, dxb)| {
                        let mut cols = vec![T::zero(); rows * hw];
                        im2col(&g[b * oimg..], &geom, &mut cols);
                        gemm(false, false, cin, hw, rows, T::one(), kd, &cols, T::one(), dxb);
                    });
                });
                acc!(*kernel, |dk| {
                    batch_reduce(n, dk, |b, part| {
                        let mut cols = vec![T::zero(); rows * hw];
                        im2col(&g[b * oimg..], &geom, &mut cols);
                        gemm(false, true, cin, rows, hw, T::one(), &x[b * cin * hw..], &cols, T::one(), part);
                    });
                });
                if let Some(bv) = bias {
                    acc!(*bv, |db| {
                        let plane = geom.in_h * geom.in_w;
                        for b in 0..n {
                            for c in 0..cout {
                                db[c] += g[(b * cout + c) * plane..(b * cout + c + 1) * plane].iter().copied().sum::<T>();
                            }
                        }
                    });
                }
            }
            Op::TemporalConv1d { input, kernel, bias, k } => {
                let k = *k;
                let xs = values[input.0].shape();
                let (t, cin) = (xs[0], xs[1]);
                let cout = values[kernel.0].shape()[0];
                let mut cols = vec![T::zero(); t * cin * k];
                acc!(*kernel, |dk| {
                    temporal_im2col(values[input.0].data(), t, cin, k, &mut cols);
                    gemm(true, false, cout, cin * k, t, T::one(), g, &cols, T::one(), dk);
                });
                acc!(*input, |dx| {
                    gemm(false, false, t, cin * k, cout, T::one(), g, values[kernel.0].data(), T::zero(), &mut cols);
                    temporal_col2im(&cols, t, cin, k, dx);
                });
                if let Some(bv) = bias {
                    acc!(*bv, |db| {
                        for row in g.chunks(cout) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                    });
                }
            }
            Op::TemporalMaxPool { input, argmax } | Op::MaxPool2d { input, argmax } => {
                acc!(*input, |dx| {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                });
            }
            Op::Dense { input, weight, bias } => {
                let ws = values[weight.0].shape();
                let (cout, cin) = (ws[0], ws[1]);
                let m = values[input.0].len() / cin;
                acc!(*input, |dx| {
                    gemm(false, false, m, cin, cout, T::one(), g, values[weight.0].data(), T::one(), dx);
                });
                acc!(*weight, |dw| {
                    gemm(true, false, cout, cin, m, T::one(), g, values[input.0].data(), T::one(), dw);
                });
                if let Some(bv) = bias {
                    acc!(*bv, |db| {
                        for row in g.chunks(cout) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                    });
                }
            }
            Op::Relu(a) => {
                acc!(*a, |dx| {
                    for ((d, &x), &gv) in dx.iter_mut().zip(values[a.0].data()).zip(g) {
                        if x > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                acc!(*a, |dx| {
                    for ((d, &y), &gv) in dx.iter_mut().zip(out.data()).zip(g) {
                        *d += gv * y * (T::one() - y);
                    }
                });
            }
            Op::Tanh(a) => {
                acc!(*a, |dx| {
                    for ((d, &y), &gv) in dx.iter_mut().zip(out.data()).zip(g) {
                        *d += gv * (T::one() - y * y);
                    }
                });
            }
            Op::SmoothL1(a) => {
                acc!(*a, |dx| {
                    for ((d, &x), &gv) in dx.iter_mut().zip(values[a.0].data()).zip(g) {
                        let local = if x.abs() < T::one() { x } else { x.signum() };
                        *d += gv * local;
                    }
                });
            }
            Op::Add(a, b) => {
                acc!(*a, |da| {
                    da.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                });
                acc!(*b, |db| {
                    db.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                });
            }
            Op::Sub(a, b) => {
                acc!(*a, |da| {
                    da.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                });
                acc!(*b, |db| {
                    db.iter_mut().zip(g).for_each(|(d, &v)| *d -= v);
                });
            }
            Op::Mul(a, b) => {
                acc!(*a, |da| {
                    for ((d, &y), &v) in da.iter_mut().zip(values[b.0].data()).zip(g) {
                        *d += v * y;
                    }
                });
                acc!(*b, |db| {
                    for ((d, &x), &v) in db.iter_mut().zip(values[a.0].data()).zip(g) {
                        *d += v * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc!(*a, |dx| {
                    dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v * c);
                });
            }
            Op::Sum(a) => {
                acc!(*a, |dx| {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                });
            }
            Op::RowSoftmax(a) => {
                acc!(*a, |dx| {
                    let c = *out.shape().last().unwrap();
                    for ((d, y), gv) in dx.chunks_mut(c).zip(out.data().chunks(c)).zip(g.chunks(c)) {
                        let dot: T = y.iter().zip(gv).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            d[j] += y[j] * (gv[j] - dot);
                        }
                    }
                });
            }
            Op::GlobalAvgPool2d(a) => {
                acc!(*a, |dx| {
                    let hw = values[a.0].len() / out.len();
                    let inv = T::one() / T::from_usize(hw).unwrap();
                    for (d, &gv) in dx.chunks_mut(hw).zip(g) {
                        d.iter_mut().for_each(|v| *v += gv * inv);
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let blk = values[p.0].shape()[*axis] * inner;
                    acc!(*p, |dp| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + blk];
                            dp[o * blk..(o + 1) * blk].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    });
                    offset += blk;
                }
            }
            Op::Slice { input, axis, start } => {
                acc!(*input, |dx| {
                    let shape = values[input.0].shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let len = out.shape()[*axis];
                    for o in 0..outer {
                        let base = (o * shape[*axis] + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dx[base..base + len * inner].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::Reshape(a) => {
                acc!(*a, |dx| {
                    dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                });
            }
            Op::Crop { input, origins } => {
                acc!(*input, |dx| {
                    let s = values[input.0].shape();
                    let (c, h, w) = (s[1], s[2], s[3]);
                    let (ch, cw) = (out.shape()[2], out.shape()[3]);
                    let mut src = g.chunks(cw);
                    for (b, &(r0, c0)) in origins.iter().enumerate() {
                        for ci in 0..c {
                            let plane = &mut dx[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                            for i in 0..ch {
                                let row = src.next().unwrap();
                                plane[(r0 + i) * w + c0..(r0 + i) * w + c0 + cw]
                                    .iter_mut()
                                    .zip(row)
                                    .for_each(|(d, &v)| *d += v);
                            }
                        }
                    }
                });
            }
            Op::SoftArgmax(a) => {
                acc!(*a, |dx| {
                    let s = values[a.0].shape();
                    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                    let (sx, sy) = axis_scales::<T>(h, w);
                    for (d, gv) in dx.chunks_mut(h * w).zip(g.chunks(2)) {
                        for i in 0..h {
                            for j in 0..w {
                                d[i * w + j] += gv[0] * T::from_usize(i).unwrap() * sx + gv[1] * T::from_usize(j).unwrap() * sy;
                            }
                        }
                    }
                });
            }
            Op::ScalarFn { input, jacobian } => {
                acc!(*input, |dx| {
                    dx.iter_mut().zip(jacobian).for_each(|(d, &j)| *d += g[0] * j);
                });
            }
        }
    }
}

fn axis_scales<T: Real>(h: usize, w: usize) -> (T, T) {
    let inv = |n: usize| if n > 1 { T::one() / T::from_usize(n - 1).unwrap() } else { T::zero() };
    (inv(h), inv(w))
}

/// In-place max-shifted softmax of one row.
/// Accumulate `f(b, acc)` over batch items into `out`. Items are grouped in
/// fixed-size chunks reduced in order, so the result does not depend on the
/// thread count.
fn batch_reduce<T: Real>(n: usize, out: &mut [T], f: impl Fn(usize, &mut [T]) + Sync) {
    const CHUNK: usize = 4;
    let len = out.len();
    let parts: Vec<Vec<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut part = vec![T::zero(); len];
            for b in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(b, &mut part);
            }
            part
        })
        .collect();
    for part in parts {
        out.iter_mut().zip(&part).for_each(|(o, p)| *o += *p);
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
