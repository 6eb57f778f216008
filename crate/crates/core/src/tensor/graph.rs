use std::borrow::Cow;
use std::collections::HashMap;

use super::linalg::gemm;
use super::{Real, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stable identifier of a model parameter, so gradients can be routed back to
/// the store the value was borrowed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey(pub usize);

/// Per-channel statistics of one training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Shape of a stride-1 "same" convolution over channel-last input. 1-D
/// convolutions use `w = kw = 1`.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pixels(&self) -> usize {
        self.h * self.w
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let (pt, pl) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let k = self.patch();
        for y in 0..self.h {
            for x0 in 0..self.w {
                let dst = &mut col[(y * self.w + x0) * k..][..k];
                for ky in 0..self.kh {
                    let row = &mut dst[ky * self.kw * self.cin..][..self.kw * self.cin];
                    let iy = (y + ky) as isize - pt as isize;
                    if iy < 0 || iy >= self.h as isize {
                        row.fill(T::zero());
                        continue;
                    }
                    for kx in 0..self.kw {
                        let cell = &mut row[kx * self.cin..][..self.cin];
                        let ix = (x0 + kx) as isize - pl as isize;
                        if ix < 0 || ix >= self.w as isize {
                            cell.fill(T::zero());
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * self.cin;
                            cell.copy_from_slice(&x[src..src + self.cin]);
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let (pt, pl) = ((self.kh - 1) / 2, (self.kw - 1) / 2);
        let k = self.patch();
        for y in 0..self.h {
            for x0 in 0..self.w {
                let src = &col[(y * self.w + x0) * k..][..k];
                for ky in 0..self.kh {
                    let iy = (y + ky) as isize - pt as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (x0 + kx) as isize - pl as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let d = (iy as usize * self.w + ix as usize) * self.cin;
                        let s = (ky * self.kw + kx) * self.cin;
                        for c in 0..self.cin {
                            dx[d + c] += src[s + c];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmGeom {
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MaxAxis {
        input: Var,
        argmax: Vec<usize>,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<T>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
        pad_id: Option<usize>,
    },
    Lstm {
        x: Var,
        w: Var,
        u: Var,
        b: Var,
        reverse: bool,
        geom: LstmGeom,
        gates: Vec<T>,
        cells: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Slice { input, .. } | Op::MaxAxis { input, .. } | Op::MaxPool2d { input, .. } => {
                vec![*input]
            }
            Op::CrossEntropy { probs, .. } => vec![*probs],
            Op::Conv { x, w, b, .. } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Embedding { table, .. } => vec![*table],
            Op::Lstm { x, w, u, b, .. } => vec![*x, *w, *u, *b],
        }
    }
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch-normalization mode for [`Graph::batch_norm`].
pub enum NormMode<'s, T> {
    /// Normalize with the statistics of this batch.
    Train { eps: T },
    /// Normalize with externally tracked statistics.
    Infer {
        mean: &'s [T],
        var: &'s [T],
        eps: T,
    },
}

/// Tape of operations recorded in execution order. Parameters are borrowed for
/// the graph's lifetime so a training step never copies weights.
pub struct Graph<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
    params: Vec<(ParamKey, Var)>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_leaf<T: Real>(t: &Tensor<T>) -> Result<(), TensorError> {
    if cfg!(debug_assertions) && !t.is_finite() {
        return Err(TensorError::NonFiniteInput { op: "leaf" });
    }
    Ok(())
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Result<Var, TensorError> {
        check_leaf(&value)?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, TensorError> {
        self.leaf(Cow::Owned(value), false)
    }

    /// An owned leaf, optionally differentiable.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var, TensorError> {
        self.leaf(Cow::Owned(value), requires_grad)
    }

    /// A borrowed, differentiable leaf tagged with its parameter key.
    pub fn param(&mut self, key: ParamKey, value: &'a Tensor<T>) -> Result<Var, TensorError> {
        let v = self.leaf(Cow::Borrowed(value), true)?;
        self.params.push((key, v));
        Ok(v)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TensorError::NonFiniteOutput { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |p, q| p + q);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |p, q| p - q);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |p, q| p * q);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("add_bias", sa, sb));
        }
        let bias = &self.value(b).data;
        let mut out = self.value(a).clone();
        if !bias.is_empty() {
            for chunk in out.data.chunks_mut(bias.len()) {
                for (o, &v) in chunk.iter_mut().zip(bias) {
                    *o += v;
                }
            }
        }
        self.push("add_bias", out, Op::AddBias(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| v * s);
        self.push("scale", out, Op::Scale(a, s))
    }

    /// `(m, k) · (k, n) → (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, &self.value(a).data, false, &self.value(b).data, false, T::zero(), &mut out.data);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (p, q))| i == axis || p == q);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor { shape, data };
        self.push(
            "concat",
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = &self.value(input).data;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push("slice", Tensor { shape, data }, Op::Slice { input, axis, start })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(input).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(input))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(input).sum());
        self.push("sum", out, Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var, TensorError> {
        let t = self.value(input);
        if t.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                reason: "empty tensor".into(),
            });
        }
        let out = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        self.push("mean", out, Op::Mean(input))
    }

    /// Maximum along `axis`, removing it. Ties resolve to the first index, which
    /// also receives the whole gradient.
    pub fn max_axis(&mut self, input: Var, axis: usize) -> Result<Var, TensorError> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(TensorError::InvalidArgument {
                op: "max_axis",
                reason: format!("axis {axis} of {s:?}"),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let n = s[axis];
        let src = &self.value(input).data;
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let idx = (o * n + j) * inner + i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                data.push(src[best]);
                argmax.push(best);
            }
        }
        let mut shape = s;
        shape.remove(axis);
        self.push("max_axis", Tensor { shape, data }, Op::MaxAxis { input, argmax })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(T::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(T::exp);
        self.push("exp", out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(T::ln);
        self.push("log", out, Op::Log(a))
    }

    /// Softmax over the last axis, shifted by the row maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let k = *t.shape.last().ok_or_else(|| TensorError::InvalidArgument {
            op: "softmax",
            reason: "scalar input".into(),
        })?;
        let mut out = t.clone();
        if k > 0 {
            for row in out.data.chunks_mut(k) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
        }
        self.push("softmax", out, Op::Softmax(a))
    }

    /// Mean over rows of `-Σ_k y_k ln(p_k + 1e-12)` for probabilities `(batch, K)`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &Tensor<T>) -> Result<Var, TensorError> {
        let p = self.value(probs);
        if p.shape != labels.shape || p.rank() != 2 || p.shape[0] == 0 {
            return Err(mismatch("cross_entropy", &p.shape, &labels.shape));
        }
        let eps = T::of(1e-12);
        let batch = T::of(p.shape[0] as f64);
        let total: T = p
            .data
            .iter()
            .zip(&labels.data)
            .filter(|(_, &y)| y != T::zero())
            .map(|(&pk, &y)| -y * (pk + eps).ln())
            .sum();
        let out = Tensor::scalar(total / batch);
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                probs,
                labels: labels.data.clone(),
            },
        )
    }

    fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var, TensorError> {
        let (hw, k, o) = (geom.pixels(), geom.patch(), geom.cout);
        let mut out = vec![T::zero(); geom.batch * hw * o];
        let mut col = vec![T::zero(); hw * k];
        {
            let xs = &self.value(x).data;
            let ws = &self.value(w).data;
            let bs = &self.value(b).data;
            for n in 0..geom.batch {
                geom.im2col(&xs[n * hw * geom.cin..][..hw * geom.cin], &mut col);
                let dst = &mut out[n * hw * o..][..hw * o];
                gemm(hw, k, o, &col, false, ws, false, T::zero(), dst);
                for row in dst.chunks_mut(o) {
                    for (v, &bias) in row.iter_mut().zip(bs) {
                        *v += bias;
                    }
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("conv input has a channel axis") = o;
        self.push("conv", Tensor { shape, data: out }, Op::Conv { x, w, b, geom })
    }

    /// Stride-1, zero-padded "same" 2-D convolution.
    /// `x: (B, H, W, Cin)`, `w: (kh, kw, Cin, Cout)`, `b: (Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[2] != sx[3] || sb != [sw[3]] {
            return Err(mismatch("conv2d", sx, sw));
        }
        let geom = ConvGeom {
            batch: sx[0],
            h: sx[1],
            w: sx[2],
            cin: sx[3],
            kh: sw[0],
            kw: sw[1],
            cout: sw[3],
        };
        self.conv(x, w, b, geom)
    }

    /// Stride-1, zero-padded "same" 1-D convolution.
    /// `x: (B, T, Cin)`, `w: (k, Cin, Cout)`, `b: (Cout)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] || sb != [sw[2]] {
            return Err(mismatch("conv1d", sx, sw));
        }
        let geom = ConvGeom {
            batch: sx[0],
            h: sx[1],
            w: 1,
            cin: sx[2],
            kh: sw[0],
            kw: 1,
            cout: sw[2],
        };
        self.conv(x, w, b, geom)
    }

    /// Non-overlapping max pooling over `(B, H, W, C)`; a trailing partial
    /// window is dropped. Ties go to the first element in row-major order.
    pub fn max_pool2d(&mut self, input: Var, window: (usize, usize)) -> Result<Var, TensorError> {
        let s = self.shape(input).to_vec();
        let (ph, pw) = window;
        if s.len() != 4 || ph == 0 || pw == 0 || s[1] < ph || s[2] < pw {
            return Err(TensorError::InvalidArgument {
                op: "max_pool2d",
                reason: format!("window {window:?} on {s:?}"),
            });
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / ph, w / pw);
        let src = &self.value(input).data;
        let mut data = Vec::with_capacity(b * oh * ow * c);
        let mut argmax = Vec::with_capacity(b * oh * ow * c);
        for n in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = ((n * h + oy * ph) * w + ox * pw) * c + ch;
                        for ky in 0..ph {
                            for kx in 0..pw {
                                let idx = ((n * h + oy * ph + ky) * w + ox * pw + kx) * c + ch;
                                if src[idx] > src[best] {
                                    best = idx;
                                }
                            }
                        }
                        data.push(src[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let out = Tensor {
            shape: vec![b, oh, ow, c],
            data,
        };
        self.push("max_pool2d", out, Op::MaxPool2d { input, argmax })
    }

    /// Batch normalization over the last (channel) axis. In training mode the
    /// batch statistics are returned so the caller can update running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>), TensorError> {
        let s = self.shape(x).to_vec();
        let c = *s.last().ok_or_else(|| mismatch("batch_norm", &s, &[]))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(mismatch("batch_norm", &s, self.shape(gamma)));
        }
        let count = self.value(x).len().checked_div(c).unwrap_or(0);
        let xs = &self.value(x).data;
        let (mean, var, eps, training) = match mode {
            NormMode::Train { eps } => {
                if count < 2 {
                    return Err(TensorError::DegenerateBatch { count });
                }
                let mut mean = vec![T::zero(); c];
                for row in xs.chunks(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                let inv_n = T::one() / T::of(count as f64);
                mean.iter_mut().for_each(|m| *m *= inv_n);
                let mut var = vec![T::zero(); c];
                for row in xs.chunks(c) {
                    for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv_n);
                (mean, var, eps, true)
            }
            NormMode::Infer { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(mismatch("batch_norm", &s, &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = &self.value(gamma).data;
        let bt = &self.value(beta).data;
        let mut xhat = Vec::with_capacity(xs.len());
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + bt[ch]);
            }
        }
        let stats = training.then_some(BatchStats { mean, var });
        let v = self.push(
            "batch_norm",
            Tensor { shape: s, data: out },
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
        )?;
        Ok((v, stats))
    }

    /// Row gather from `table: (V, D)` for ids laid out as `id_shape`; the output
    /// shape is `id_shape ++ [D]`. The `pad_id` row never receives gradient.
    pub fn embedding(
        &mut self,
        table: Var,
        ids: &[usize],
        id_shape: &[usize],
        pad_id: Option<usize>,
    ) -> Result<Var, TensorError> {
        let st = self.shape(table);
        if st.len() != 2 || id_shape.iter().product::<usize>() != ids.len() {
            return Err(mismatch("embedding", st, id_shape));
        }
        let (vocab_size, dim) = (st[0], st[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(TensorError::IdOutOfRange { id, vocab_size });
        }
        let tab = &self.value(table).data;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(&tab[id * dim..(id + 1) * dim]);
        }
        let mut shape = id_shape.to_vec();
        shape.push(dim);
        self.push(
            "embedding",
            Tensor { shape, data },
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                pad_id,
            },
        )
    }

    /// One LSTM direction over a whole sequence, returning every hidden state.
    ///
    /// `x: (B, T, I)`, `w: (I, 4H)`, `u: (H, 4H)`, `b: (4H)`, gate blocks ordered
    /// input, forget, cell, output. With `reverse` the recurrence runs from
    /// `t = T-1` down to 0; outputs stay at their original time index.
    pub fn lstm_sequence(&mut self, x: Var, w: Var, u: Var, b: Var, reverse: bool) -> Result<Var, TensorError> {
        let (sx, sw, su) = (self.shape(x), self.shape(w), self.shape(u));
        if sx.len() != 3 || sw.len() != 2 || su.len() != 2 || sw[0] != sx[2] {
            return Err(mismatch("lstm", sx, sw));
        }
        let hidden = su[0];
        if su[1] != 4 * hidden || sw[1] != 4 * hidden || self.shape(b) != [4 * hidden] {
            return Err(mismatch("lstm", su, sw));
        }
        if sx[1] == 0 {
            return Err(TensorError::InvalidArgument {
                op: "lstm",
                reason: "empty sequence".into(),
            });
        }
        let geom = LstmGeom {
            batch: sx[0],
            steps: sx[1],
            input: sx[2],
            hidden,
        };
        let (bsz, steps, h4) = (geom.batch, geom.steps, 4 * hidden);
        let rows = bsz * steps;
        let mut gates = vec![T::zero(); rows * h4];
        gemm(rows, geom.input, h4, &self.value(x).data, false, &self.value(w).data, false, T::zero(), &mut gates);
        let bias = &self.value(b).data;
        for row in gates.chunks_mut(h4) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let us = &self.value(u).data;
        let mut cells = vec![T::zero(); rows * hidden];
        let mut out = vec![T::zero(); rows * hidden];
        let mut h_prev = vec![T::zero(); bsz * hidden];
        let mut c_prev = vec![T::zero(); bsz * hidden];
        let mut rec = vec![T::zero(); bsz * h4];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            if s > 0 {
                gemm(bsz, hidden, h4, &h_prev, false, us, false, T::zero(), &mut rec);
            }
            for n in 0..bsz {
                let r = n * steps + t;
                let z = &mut gates[r * h4..(r + 1) * h4];
                if s > 0 {
                    for (zv, &rv) in z.iter_mut().zip(&rec[n * h4..(n + 1) * h4]) {
                        *zv += rv;
                    }
                }
                for j in 0..hidden {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[hidden + j]);
                    let g_g = z[2 * hidden + j].tanh();
                    let o_g = sigmoid(z[3 * hidden + j]);
                    z[j] = i_g;
                    z[hidden + j] = f_g;
                    z[2 * hidden + j] = g_g;
                    z[3 * hidden + j] = o_g;
                    let c = f_g * c_prev[n * hidden + j] + i_g * g_g;
                    let hv = o_g * c.tanh();
                    cells[r * hidden + j] = c;
                    out[r * hidden + j] = hv;
                    c_prev[n * hidden + j] = c;
                    h_prev[n * hidden + j] = hv;
                }
            }
        }
        let value = Tensor {
            shape: vec![bsz, steps, hidden],
            data: out,
        };
        self.push(
            "lstm",
            value,
            Op::Lstm {
                x,
                w,
                u,
                b,
                reverse,
                geom,
                gates,
                cells,
            },
        )
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the graph so that
    /// activations are released as soon as their consumers are processed.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss { shape: ls.to_vec() });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();
        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if matches!(self.nodes[i].op, Op::Leaf) {
                    let shape = self.nodes[i].value.shape().to_vec();
                    leaves.insert(Var(i), Tensor::zeros(&shape));
                }
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                let shape = self.nodes[i].value.shape().to_vec();
                leaves.insert(Var(i), Tensor { shape, data: g });
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            // Everything that consumed node i has already run.
            let node = &mut self.nodes[i];
            node.value = Cow::Owned(Tensor::zeros(&[0]));
            node.op = Op::Leaf;
        }
        Ok(Gradients {
            leaves,
            params: self.params,
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[i].value;
        let val = |v: Var| &self.nodes[v.0].value.data;
        let needs = |v: Var| self.needs(v);
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
            }};
        }
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, T::one())] {
                    if needs(v) {
                        slot!(v).iter_mut().zip(g).for_each(|(d, &gv)| *d += sign * gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if needs(v) {
                        slot!(v).iter_mut().zip(g).for_each(|(d, &gv)| *d += sign * gv);
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = val(*b);
                    for ((d, &gv), &o) in slot!(*a).iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
                if needs(*b) {
                    let other = val(*a);
                    for ((d, &gv), &o) in slot!(*b).iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            Op::AddBias(a, b) => {
                if needs(*a) {
                    slot!(*a).iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if needs(*b) {
                    let db = slot!(*b);
                    let len = db.len();
                    if len > 0 {
                        for chunk in g.chunks(len) {
                            db.iter_mut().zip(chunk).for_each(|(d, &gv)| *d += gv);
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if needs(*a) {
                    slot!(*a).iter_mut().zip(g).for_each(|(d, &gv)| *d += *s * gv);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let bv = val(*b);
                    gemm(m, n, k, g, false, bv, true, T::one(), slot!(*a));
                }
                if needs(*b) {
                    let av = val(*a);
                    gemm(k, m, n, av, true, g, false, T::one(), slot!(*b));
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.nodes[v.0].value.shape()[*axis] * inner;
                    if needs(v) {
                        let d = slot!(v);
                        for o in 0..outer {
                            let src = &g[o * row + offset..][..chunk];
                            d[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, &gv)| *x += gv);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                if needs(*input) {
                    let s = self.nodes[input.0].value.shape().to_vec();
                    let outer: usize = s[..*axis].iter().product();
                    let inner: usize = s[*axis + 1..].iter().product();
                    let len = out.shape()[*axis];
                    let d = slot!(*input);
                    for o in 0..outer {
                        let base = (o * s[*axis] + start) * inner;
                        d[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(x, &gv)| *x += gv);
                    }
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    slot!(*a).iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    slot!(*a).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let d = slot!(*a);
                    let share = g[0] / T::of(d.len() as f64);
                    d.iter_mut().for_each(|x| *x += share);
                }
            }
            Op::MaxAxis { input, argmax } | Op::MaxPool2d { input, argmax } => {
                if needs(*input) {
                    let d = slot!(*input);
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        d[idx] += gv;
                    }
                }
            }
            Op::Tanh(a) => {
                if needs(*a) {
                    for ((d, &gv), &y) in slot!(*a).iter_mut().zip(g).zip(&out.data) {
                        *d += gv * (T::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    for ((d, &gv), &y) in slot!(*a).iter_mut().zip(g).zip(&out.data) {
                        *d += gv * y * (T::one() - y);
                    }
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    for ((d, &gv), &y) in slot!(*a).iter_mut().zip(g).zip(&out.data) {
                        if y > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if needs(*a) {
                    for ((d, &gv), &y) in slot!(*a).iter_mut().zip(g).zip(&out.data) {
                        *d += gv * y;
                    }
                }
            }
            Op::Log(a) => {
                if needs(*a) {
                    let x = val(*a);
                    for ((d, &gv), &xv) in slot!(*a).iter_mut().zip(g).zip(x) {
                        *d += gv / xv;
                    }
                }
            }
            Op::Softmax(a) => {
                if needs(*a) {
                    let k = *out.shape().last().unwrap_or(&1);
                    let d = slot!(*a);
                    for ((drow, grow), yrow) in d.chunks_mut(k).zip(g.chunks(k)).zip(out.data.chunks(k)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&gv, &y)| gv * y).sum();
                        for ((dx, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dx += y * (gv - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                if needs(*probs) {
                    let p = val(*probs);
                    let batch = T::of(self.nodes[probs.0].value.shape()[0] as f64);
                    let eps = T::of(1e-12);
                    for ((d, &pk), &y) in slot!(*probs).iter_mut().zip(p).zip(labels) {
                        if y != T::zero() {
                            *d -= g[0] * y / ((pk + eps) * batch);
                        }
                    }
                }
            }
            Op::Conv { x, w, b, geom } => self.backprop_conv(*x, *w, *b, geom, g, grads),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let c = inv_std.len();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (grow, xrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        sum_g[ch] += grow[ch];
                        sum_gx[ch] += grow[ch] * xrow[ch];
                    }
                }
                if needs(*x) {
                    let gam = val(*gamma).clone();
                    let count = T::of((g.len() / c.max(1)) as f64);
                    let d = slot!(*x);
                    for ((drow, grow), xrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch];
                            if *training {
                                drow[ch] += scale * (grow[ch] - sum_g[ch] / count - xrow[ch] * sum_gx[ch] / count);
                            } else {
                                drow[ch] += scale * grow[ch];
                            }
                        }
                    }
                }
                if needs(*gamma) {
                    slot!(*gamma).iter_mut().zip(&sum_gx).for_each(|(d, &v)| *d += v);
                }
                if needs(*beta) {
                    slot!(*beta).iter_mut().zip(&sum_g).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Embedding { table, ids, pad_id } => {
                if needs(*table) {
                    let dim = self.nodes[table.0].value.shape()[1];
                    let d = slot!(*table);
                    for (pos, &id) in ids.iter().enumerate() {
                        if Some(id) == *pad_id {
                            continue;
                        }
                        d[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(&g[pos * dim..(pos + 1) * dim])
                            .for_each(|(x, &gv)| *x += gv);
                    }
                }
            }
            Op::Lstm {
                x,
                w,
                u,
                b,
                reverse,
                geom,
                gates,
                cells,
            } => self.backprop_lstm([*x, *w, *u, *b], *reverse, geom, gates, cells, &out.data, g, grads),
        }
    }

    fn backprop_conv(&self, x: Var, w: Var, b: Var, geom: &ConvGeom, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (hw, k, o) = (geom.pixels(), geom.patch(), geom.cout);
        let xs = &self.nodes[x.0].value.data;
        let ws = &self.nodes[w.0].value.data;
        let (nx, nw, nb) = (self.needs(x), self.needs(w), self.needs(b));
        let mut take = |v: Var, want: bool| -> Option<Vec<T>> {
            want.then(|| {
                let len = self.nodes[v.0].value.len();
                grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len])
            })
        };
        let mut dx = take(x, nx);
        let mut dw = take(w, nw);
        let mut db = take(b, nb);
        let mut col = vec![T::zero(); hw * k];
        let mut dcol = vec![T::zero(); if nx { hw * k } else { 0 }];
        for n in 0..geom.batch {
            let gs = &g[n * hw * o..][..hw * o];
            if let Some(db) = db.as_mut() {
                for row in gs.chunks(o) {
                    db.iter_mut().zip(row).for_each(|(d, &gv)| *d += gv);
                }
            }
            if let Some(dw) = dw.as_mut() {
                geom.im2col(&xs[n * hw * geom.cin..][..hw * geom.cin], &mut col);
                gemm(k, hw, o, &col, true, gs, false, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(hw, o, k, gs, false, ws, true, T::zero(), &mut dcol);
                geom.col2im_add(&dcol, &mut dx[n * hw * geom.cin..][..hw * geom.cin]);
            }
        }
        for (v, d) in [(x, dx), (w, dw), (b, db)] {
            if d.is_some() {
                grads[v.0] = d;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_lstm(
        &self,
        [x, w, u, b]: [Var; 4],
        reverse: bool,
        geom: &LstmGeom,
        gates: &[T],
        cells: &[T],
        hs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let LstmGeom {
            batch,
            steps,
            input,
            hidden,
        } = *geom;
        let h4 = 4 * hidden;
        let rows = batch * steps;
        let us = &self.nodes[u.0].value.data;
        let mut dz_all = vec![T::zero(); rows * h4];
        let mut dh_next = vec![T::zero(); batch * hidden];
        let mut dc_next = vec![T::zero(); batch * hidden];
        let mut dz_t = vec![T::zero(); batch * h4];
        let mut h_prev = vec![T::zero(); batch * hidden];
        let mut du = self.needs(u).then(|| vec![T::zero(); hidden * h4]);
        for s in (0..steps).rev() {
            let t = if reverse { steps - 1 - s } else { s };
            let tp = if reverse { t + 1 } else { t.wrapping_sub(1) };
            for n in 0..batch {
                let r = n * steps + t;
                let z = &gates[r * h4..(r + 1) * h4];
                for j in 0..hidden {
                    let (i_g, f_g, g_g, o_g) = (z[j], z[hidden + j], z[2 * hidden + j], z[3 * hidden + j]);
                    let c = cells[r * hidden + j];
                    let tc = c.tanh();
                    let dh = g[r * hidden + j] + dh_next[n * hidden + j];
                    let d_o = dh * tc;
                    let dc = dc_next[n * hidden + j] + dh * o_g * (T::one() - tc * tc);
                    let c_prev = if s > 0 {
                        cells[(n * steps + tp) * hidden + j]
                    } else {
                        T::zero()
                    };
                    dc_next[n * hidden + j] = dc * f_g;
                    let dz = &mut dz_t[n * h4..(n + 1) * h4];
                    dz[j] = dc * g_g * i_g * (T::one() - i_g);
                    dz[hidden + j] = dc * c_prev * f_g * (T::one() - f_g);
                    dz[2 * hidden + j] = dc * i_g * (T::one() - g_g * g_g);
                    dz[3 * hidden + j] = d_o * o_g * (T::one() - o_g);
                }
                dz_all[r * h4..(r + 1) * h4].copy_from_slice(&dz_t[n * h4..(n + 1) * h4]);
            }
            if s > 0 {
                gemm(batch, h4, hidden, &dz_t, false, us, true, T::zero(), &mut dh_next);
                if let Some(du) = du.as_mut() {
                    for n in 0..batch {
                        let src = (n * steps + tp) * hidden;
                        h_prev[n * hidden..(n + 1) * hidden].copy_from_slice(&hs[src..src + hidden]);
                    }
                    gemm(hidden, batch, h4, &h_prev, true, &dz_t, false, T::one(), du);
                }
            }
        }
        let len = |v: Var| self.nodes[v.0].value.len();
        if let Some(du) = du {
            let d = grads[u.0].get_or_insert_with(|| vec![T::zero(); len(u)]);
            d.iter_mut().zip(&du).for_each(|(a, &v)| *a += v);
        }
        if self.needs(b) {
            let d = grads[b.0].get_or_insert_with(|| vec![T::zero(); h4]);
            for row in dz_all.chunks(h4) {
                d.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
        }
        if self.needs(w) {
            let xs = &self.nodes[x.0].value.data;
            let d = grads[w.0].get_or_insert_with(|| vec![T::zero(); len(w)]);
            gemm(input, rows, h4, xs, true, &dz_all, false, T::one(), d);
        }
        if self.needs(x) {
            let ws = &self.nodes[w.0].value.data;
            let d = grads[x.0].get_or_insert_with(|| vec![T::zero(); len(x)]);
            gemm(rows, h4, input, &dz_all, false, ws, true, T::one(), d);
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`]. Every differentiable leaf has
/// an entry; leaves the loss does not depend on get zeros.
pub struct Gradients<T: Real> {
    leaves: HashMap<Var, Tensor<T>>,
    params: Vec<(ParamKey, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    /// Gradient per parameter key, summing over repeated insertions of the same key.
    pub fn into_params(mut self) -> HashMap<ParamKey, Tensor<T>> {
        let mut out: HashMap<ParamKey, Tensor<T>> = HashMap::new();
        for (key, var) in self.params {
            let Some(g) = self.leaves.remove(&var) else {
                continue;
            };
            match out.get_mut(&key) {
                Some(acc) => acc.data.iter_mut().zip(&g.data).for_each(|(a, &b)| *a += b),
                None => {
                    out.insert(key, g);
                }
            }
        }
        out
    }
}
