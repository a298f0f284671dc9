//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Every op evaluates eagerly, stores its output value, and records how to
//! push an output gradient back onto its inputs. [`Tape::backward`] replays
//! those rules in reverse execution order.

use crate::error::{contract_err, dim_err, Result};
use crate::kernels;
use crate::scalar::Real;
use crate::tensor::{matrix_dims, spatial_dims, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Max,
}

enum Op<T> {
    Leaf,
    Binary(Binary, Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    Conv1x1 {
        f: Var,
        w: Var,
        bias: Option<Var>,
    },
    Conv3x3 {
        f: Var,
        w: Var,
        bias: Option<Var>,
    },
    Resize(Var),
    Concat(Vec<Var>),
    SliceChannel(Var, usize),
    AvgPool2x(Var),
    Reshape(Var),
    Sum(Var),
    Bce {
        pred: Var,
        target: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Prediction clamp used by [`Tape::bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that receives a gradient on [`backward`](Self::backward).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
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

    /// Gradient of the last backward pass; `None` before backward or for
    /// values that do not require one.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite() || !self.inputs_finite(&op));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op<T>) -> bool {
        op_inputs(op)
            .iter()
            .all(|v| self.nodes[v.0].value.all_finite())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, data: Vec<T>, shape: &[usize], op: Op<T>) -> Result<Var> {
        let requires_grad = self.rg(&op_inputs(&op));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, requires_grad))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err!(
                "{kind:?}: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Max => {
                    if x >= y {
                        x
                    } else {
                        y
                    }
                }
            })
            .collect();
        let shape = ta.shape().to_vec();
        self.record(data, &shape, Op::Binary(kind, a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Max, a, b)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v * s).collect();
        let shape = t.shape().to_vec();
        self.record(data, &shape, Op::Scale(a, s))
    }

    /// Multiplies every element of `a` by the scalar value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(dim_err!("scale_by: gate must be scalar, got {:?}", self.shape(s)));
        }
        let g = self.value(s).data()[0];
        let t = self.value(a);
        let data = t.data().iter().map(|&v| g * v).collect();
        let shape = t.shape().to_vec();
        self.record(data, &shape, Op::ScaleBy(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v.max(T::zero())).collect();
        let shape = t.shape().to_vec();
        self.record(data, &shape, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| sigmoid(v)).collect();
        let shape = t.shape().to_vec();
        self.record(data, &shape, Op::Sigmoid(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.shape(a))?;
        let (k2, p) = matrix_dims(self.shape(b))?;
        if k != k2 {
            return Err(dim_err!(
                "matmul: inner extents differ, {:?} ⊗ {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, p);
        self.record(data, &[m, p], Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, p) = matrix_dims(self.shape(a))?;
        let data = kernels::transpose(self.value(a).data(), m, p);
        self.record(data, &[p, m], Op::Transpose(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, p) = matrix_dims(self.shape(a))?;
        let data = kernels::softmax_rows(self.value(a).data(), m, p);
        self.record(data, &[m, p], Op::SoftmaxRows(a))
    }

    /// Per-pixel channel map `H×W×Cin → H×W×Cout`; `w` is `Cin×Cout`.
    pub fn conv1x1(&mut self, f: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (h, wd, cin) = spatial_dims(self.shape(f))?;
        let (wcin, cout) = matrix_dims(self.shape(w))?;
        if wcin != cin {
            return Err(dim_err!(
                "conv1x1: feature has {cin} channels, weight is {:?}",
                self.shape(w)
            ));
        }
        let mut data = kernels::matmul(self.value(f).data(), self.value(w).data(), h * wd, cin, cout);
        if let Some(b) = bias {
            add_bias(&mut data, self.value(b), cout, "conv1x1")?;
        }
        self.record(data, &[h, wd, cout], Op::Conv1x1 { f, w, bias })
    }

    /// 3×3 cross-correlation with zero padding 1; `w` is `3×3×Cin×Cout`.
    pub fn conv3x3(&mut self, f: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (h, wd, cin) = spatial_dims(self.shape(f))?;
        let (cin_w, cout) = match *self.shape(w) {
            [3, 3, ci, co] => (ci, co),
            ref s => return Err(dim_err!("conv3x3: weight must be 3×3×Cin×Cout, got {s:?}")),
        };
        if cin_w != cin {
            return Err(dim_err!(
                "conv3x3: feature has {cin} channels, weight is {:?}",
                self.shape(w)
            ));
        }
        let mut data = kernels::conv3x3(self.value(f).data(), self.value(w).data(), h, wd, cin, cout);
        if let Some(b) = bias {
            add_bias(&mut data, self.value(b), cout, "conv3x3")?;
        }
        self.record(data, &[h, wd, cout], Op::Conv3x3 { f, w, bias })
    }

    /// Corner-aligned bilinear resampling of an `h×w` or `h×w×c` tensor.
    pub fn bilinear_resize(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(dim_err!("bilinear_resize: zero output extent {out_h}×{out_w}"));
        }
        let shape = self.shape(a).to_vec();
        let (h, w, c) = spatial_dims(&shape)?;
        let data = kernels::bilinear(self.value(a).data(), h, w, c, out_h, out_w);
        let out_shape = if shape.len() == 2 {
            vec![out_h, out_w]
        } else {
            vec![out_h, out_w, c]
        };
        self.record(data, &out_shape, Op::Resize(a))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| contract_err!("concat_channels: empty input list"))?;
        let (h, w, _) = spatial_dims(self.shape(*first))?;
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let (ph, pw, pc) = spatial_dims(self.shape(p))?;
            if (ph, pw) != (h, w) {
                return Err(dim_err!(
                    "concat_channels: spatial extents {:?} vs {:?}",
                    self.shape(*first),
                    self.shape(p)
                ));
            }
            chans.push(pc);
        }
        let total: usize = chans.iter().sum();
        let mut data = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for (&p, &pc) in parts.iter().zip(&chans) {
                data.extend_from_slice(&self.value(p).data()[px * pc..(px + 1) * pc]);
            }
        }
        self.record(data, &[h, w, total], Op::Concat(parts.to_vec()))
    }

    /// Extracts channel `index` of an `H×W×C` tensor as an `H×W` matrix.
    pub fn slice_channel(&mut self, a: Var, index: usize) -> Result<Var> {
        let (h, w, c) = spatial_dims(self.shape(a))?;
        if index >= c {
            return Err(dim_err!("slice_channel: index {index} out of {c} channels"));
        }
        let src = self.value(a).data();
        let data = (0..h * w).map(|px| src[px * c + index]).collect();
        self.record(data, &[h, w], Op::SliceChannel(a, index))
    }

    /// 2×2 mean pooling; odd trailing rows/columns average what is present.
    pub fn avgpool2x(&mut self, a: Var) -> Result<Var> {
        let (h, w, c) = spatial_dims(self.shape(a))?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let src = self.value(a).data();
        let mut data = vec![T::zero(); oh * ow * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let cells = pool_cells(oy, ox, h, w);
                let inv = T::one() / T::from_count(cells.len());
                for ch in 0..c {
                    let mut acc = T::zero();
                    for &(y, x) in &cells {
                        acc = acc + src[(y * w + x) * c + ch];
                    }
                    data[(oy * ow + ox) * c + ch] = acc * inv;
                }
            }
        }
        let shape = if self.shape(a).len() == 2 {
            vec![oh, ow]
        } else {
            vec![oh, ow, c]
        };
        self.record(data, &shape, Op::AvgPool2x(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let data = self.value(a).data().to_vec();
        self.record(data, shape, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().copied().sum();
        self.record(vec![total], &[1], Op::Sum(a))
    }

    /// Pixel-mean binary cross entropy with predictions clamped to
    /// `[BCE_CLAMP, 1 − BCE_CLAMP]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(dim_err!(
                "bce_loss: prediction {:?} vs target {:?}",
                self.shape(pred),
                target.shape()
            ));
        }
        let loss = bce_value(self.value(pred).data(), target.data());
        self.record(
            vec![loss],
            &[1],
            Op::Bce {
                pred,
                target: target.clone(),
            },
        )
    }

    /// Back-propagates from a scalar `loss`, replacing gradients of any
    /// earlier pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        self.grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(d) => Tensor::new(node.value.shape(), d).expect("grad shape"),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                match kind {
                    Binary::Add => {
                        self.acc(grads, *a, |d| axpy(d, g, T::one()));
                        self.acc(grads, *b, |d| axpy(d, g, T::one()));
                    }
                    Binary::Sub => {
                        self.acc(grads, *a, |d| axpy(d, g, T::one()));
                        self.acc(grads, *b, |d| axpy(d, g, -T::one()));
                    }
                    Binary::Mul => {
                        self.acc(grads, *a, |d| {
                            for i in 0..d.len() {
                                d[i] = d[i] + g[i] * vb[i];
                            }
                        });
                        self.acc(grads, *b, |d| {
                            for i in 0..d.len() {
                                d[i] = d[i] + g[i] * va[i];
                            }
                        });
                    }
                    Binary::Max => {
                        self.acc(grads, *a, |d| {
                            for i in 0..d.len() {
                                if va[i] >= vb[i] {
                                    d[i] = d[i] + g[i];
                                }
                            }
                        });
                        self.acc(grads, *b, |d| {
                            for i in 0..d.len() {
                                if va[i] < vb[i] {
                                    d[i] = d[i] + g[i];
                                }
                            }
                        });
                    }
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, |d| axpy(d, g, *s)),
            Op::ScaleBy(a, s) => {
                let gate = self.value(*s).data()[0];
                let va = self.value(*a).data();
                self.acc(grads, *a, |d| axpy(d, g, gate));
                self.acc(grads, *s, |d| {
                    let dot: T = g.iter().zip(va).map(|(&x, &y)| x * y).sum();
                    d[0] = d[0] + dot;
                });
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        if va[i] > T::zero() {
                            d[i] = d[i] + g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] = d[i] + g[i] * out[i] * (T::one() - out[i]);
                }
            }),
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims(self.shape(*a)).expect("matmul lhs");
                let p = node.value.shape()[1];
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    let ga = kernels::matmul_nt(g, vb, m, p, k);
                    axpy(d, &ga, T::one());
                });
                self.acc(grads, *b, |d| kernels::matmul_tn_acc(va, g, m, k, p, d));
            }
            Op::Transpose(a) => {
                let (m, p) = matrix_dims(self.shape(*a)).expect("transpose input");
                self.acc(grads, *a, |d| {
                    let back = kernels::transpose(g, p, m);
                    axpy(d, &back, T::one());
                });
            }
            Op::SoftmaxRows(a) => {
                let p = node.value.shape()[1];
                self.acc(grads, *a, |d| {
                    for (r, (grow, yrow)) in g.chunks(p).zip(out.chunks(p)).enumerate() {
                        let dot: T = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                        for j in 0..p {
                            d[r * p + j] = d[r * p + j] + yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Conv1x1 { f, w, bias } => {
                let (h, wd, cin) = spatial_dims(self.shape(*f)).expect("conv1x1 input");
                let cout = node.value.shape()[2];
                let n = h * wd;
                let (vf, vw) = (self.value(*f).data(), self.value(*w).data());
                self.acc(grads, *f, |d| {
                    let gf = kernels::matmul_nt(g, vw, n, cout, cin);
                    axpy(d, &gf, T::one());
                });
                self.acc(grads, *w, |d| kernels::matmul_tn_acc(vf, g, n, cin, cout, d));
                if let Some(b) = bias {
                    self.acc(grads, *b, |d| bias_grad(d, g, cout));
                }
            }
            Op::Conv3x3 { f, w, bias } => {
                let (h, wd, cin) = spatial_dims(self.shape(*f)).expect("conv3x3 input");
                let cout = node.value.shape()[2];
                let (vf, vw) = (self.value(*f).data(), self.value(*w).data());
                let need_f = self.nodes[f.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                if need_f || need_w {
                    let mut gf = need_f.then(|| take_or_zero(grads, *f, vf.len()));
                    let mut gw = need_w.then(|| take_or_zero(grads, *w, vw.len()));
                    kernels::conv3x3_backward(
                        vf,
                        vw,
                        g,
                        h,
                        wd,
                        cin,
                        cout,
                        gf.as_deref_mut(),
                        gw.as_deref_mut(),
                    );
                    if let Some(gf) = gf {
                        grads[f.0] = Some(gf);
                    }
                    if let Some(gw) = gw {
                        grads[w.0] = Some(gw);
                    }
                }
                if let Some(b) = bias {
                    self.acc(grads, *b, |d| bias_grad(d, g, cout));
                }
            }
            Op::Resize(a) => {
                let (h, w, c) = spatial_dims(self.shape(*a)).expect("resize input");
                let (oh, ow, _) = spatial_dims(node.value.shape()).expect("resize output");
                self.acc(grads, *a, |d| kernels::bilinear_backward(g, h, w, c, oh, ow, d));
            }
            Op::Concat(parts) => {
                let total = node.value.shape()[2];
                let px_count = node.value.shape()[0] * node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let pc = spatial_dims(self.shape(p)).expect("concat part").2;
                    self.acc(grads, p, |d| {
                        for px in 0..px_count {
                            for ch in 0..pc {
                                d[px * pc + ch] = d[px * pc + ch] + g[px * total + offset + ch];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceChannel(a, index) => {
                let c = spatial_dims(self.shape(*a)).expect("slice input").2;
                self.acc(grads, *a, |d| {
                    for (px, &gv) in g.iter().enumerate() {
                        d[px * c + index] = d[px * c + index] + gv;
                    }
                });
            }
            Op::AvgPool2x(a) => {
                let (h, w, c) = spatial_dims(self.shape(*a)).expect("pool input");
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                self.acc(grads, *a, |d| {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let cells = pool_cells(oy, ox, h, w);
                            let inv = T::one() / T::from_count(cells.len());
                            for ch in 0..c {
                                let gv = g[(oy * ow + ox) * c + ch] * inv;
                                for &(y, x) in &cells {
                                    let i = (y * w + x) * c + ch;
                                    d[i] = d[i] + gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => self.acc(grads, *a, |d| axpy(d, g, T::one())),
            Op::Sum(a) => self.acc(grads, *a, |d| {
                for v in d.iter_mut() {
                    *v = *v + g[0];
                }
            }),
            Op::Bce { pred, target } => {
                let vp = self.value(*pred).data();
                let n = T::from_count(vp.len());
                let lo = T::lit(BCE_CLAMP);
                let hi = T::one() - lo;
                self.acc(grads, *pred, |d| {
                    for i in 0..d.len() {
                        let (p, y) = (vp[i], target.data()[i]);
                        if p < lo || p > hi {
                            continue;
                        }
                        let dp = (-y / p + (T::one() - y) / (T::one() - p)) / n;
                        d[i] = d[i] + g[0] * dp;
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.numel();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Binary(_, a, b) | Op::MatMul(a, b) | Op::ScaleBy(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Transpose(a)
        | Op::SoftmaxRows(a)
        | Op::Resize(a)
        | Op::SliceChannel(a, _)
        | Op::AvgPool2x(a)
        | Op::Reshape(a)
        | Op::Sum(a) => vec![*a],
        Op::Conv1x1 { f, w, bias } | Op::Conv3x3 { f, w, bias } => {
            let mut v = vec![*f, *w];
            v.extend(bias);
            v
        }
        Op::Concat(parts) => parts.clone(),
        Op::Bce { pred, .. } => vec![*pred],
    }
}

fn take_or_zero<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len])
}

fn axpy<T: Real>(d: &mut [T], g: &[T], s: T) {
    for (x, &y) in d.iter_mut().zip(g) {
        *x = *x + s * y;
    }
}

fn add_bias<T: Real>(data: &mut [T], bias: &Tensor<T>, cout: usize, op: &str) -> Result<()> {
    if bias.numel() != cout {
        return Err(dim_err!(
            "{op}: bias {:?} does not match {cout} output channels",
            bias.shape()
        ));
    }
    for px in data.chunks_mut(cout) {
        for (v, &b) in px.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    Ok(())
}

fn bias_grad<T: Real>(d: &mut [T], g: &[T], cout: usize) {
    for px in g.chunks(cout) {
        for (x, &y) in d.iter_mut().zip(px) {
            *x = *x + y;
        }
    }
}

fn pool_cells(oy: usize, ox: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut cells = Vec::with_capacity(4);
    for y in 2 * oy..(2 * oy + 2).min(h) {
        for x in 2 * ox..(2 * ox + 2).min(w) {
            cells.push((y, x));
        }
    }
    cells
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn bce_value<T: Real>(pred: &[T], target: &[T]) -> T {
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let total: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum();
    total / T::from_count(pred.len())
}
