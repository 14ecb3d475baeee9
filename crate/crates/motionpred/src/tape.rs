//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! A [`Tape`] is an append-only arena of nodes. Every forward operation
//! validates its inputs, computes its result eagerly, and records enough
//! structure to run the chain rule backwards. Node indices are handed out
//! as opaque [`VarId`]s; because an operation can only refer to nodes that
//! already exist, tape order is a topological order and [`Tape::backward`]
//! is a single reverse sweep.
//!
//! Tapes are cheap and short-lived: build one per forward pass, call
//! `backward`, drop it. Tensors read out of a tape are plain values with no
//! link back to the graph.
//!
//! Numeric contract: operations reject inputs outside their domain (`log`
//! of a non-positive value, `sqrt` of a negative value) and fail with a
//! domain error if an arithmetic result overflows to a non-finite value, so
//! finite tensors in means finite tensors out.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, numel_of, TensorBase};

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Constant,
    Variable,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    AddScalar(VarId),
    Scale(VarId, S),
    Exp(VarId),
    Log(VarId),
    Tanh(VarId),
    Relu(VarId),
    Square(VarId),
    Sqrt(VarId),
    Matmul(VarId, VarId),
    Softmax(VarId),
    SumAxis(VarId, usize),
    MeanAxis(VarId, usize),
    SumAll(VarId),
    MeanAll(VarId),
    ConvTime {
        x: VarId,
        kernels: VarId,
        bias: VarId,
    },
    Reshape(VarId),
    Permute(VarId, Vec<usize>),
    Narrow {
        x: VarId,
        axis: usize,
        start: usize,
        len: usize,
    },
    BroadcastAdd(VarId, VarId),
}

#[derive(Debug)]
struct Node<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    op: Op<S>,
    /// True when a variable is reachable from this node, i.e. gradients
    /// flow through it. Constant subgraphs are skipped by `backward`.
    diff: bool,
}

/// Gradients produced by one [`Tape::backward`] call.
///
/// Only variable leaves keep a slot; intermediate gradients are freed
/// during the sweep. `get` returns `None` for constants, for intermediates,
/// and for variables the root does not depend on.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: VarId) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Append-only computation graph. See the module docs for the model.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that gradients do not flow into.
    pub fn constant(&mut self, t: &TensorBase<S>) -> VarId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Constant, false)
    }

    /// Records a leaf that `backward` produces a gradient for.
    pub fn variable(&mut self, t: &TensorBase<S>) -> VarId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Variable, true)
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: VarId) -> &[S] {
        &self.node(v).data
    }

    /// Copies a node's value out of the tape as a plain tensor.
    pub fn value(&self, v: VarId) -> TensorBase<S> {
        let n = self.node(v);
        TensorBase::new(n.shape.clone(), n.data.clone())
            .expect("tape nodes hold validated finite data")
    }

    // ---- elementwise ----

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise difference `a - b` of two same-shape tensors.
    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a scalar constant to every element.
    pub fn add_scalar(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let c = S::from_f64(c);
        self.unary_elementwise(a, "add_scalar", |x| x + c, Op::AddScalar(a))
    }

    /// Multiplies every element by a scalar constant.
    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let c = S::from_f64(c);
        self.unary_elementwise(a, "scale", |x| x * c, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        self.unary_elementwise(a, "exp", |x| x.exp(), Op::Exp(a))
    }

    /// Natural logarithm. Every element must be strictly positive.
    pub fn log(&mut self, a: VarId) -> Result<VarId> {
        if let Some(&bad) = self.node(a).data.iter().find(|x| **x <= S::zero()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        self.unary_elementwise(a, "log", |x| x.ln(), Op::Log(a))
    }

    pub fn tanh(&mut self, a: VarId) -> Result<VarId> {
        self.unary_elementwise(a, "tanh", |x| x.tanh(), Op::Tanh(a))
    }

    /// Rectified linear unit. The derivative at exactly zero is taken as 0.
    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        self.unary_elementwise(a, "relu", |x| x.max(S::zero()), Op::Relu(a))
    }

    pub fn square(&mut self, a: VarId) -> Result<VarId> {
        self.unary_elementwise(a, "square", |x| x * x, Op::Square(a))
    }

    /// Elementwise square root. Every element must be non-negative.
    /// The derivative blows up toward zero; callers that differentiate
    /// through `sqrt` must keep inputs away from exact zero.
    pub fn sqrt(&mut self, a: VarId) -> Result<VarId> {
        if let Some(&bad) = self.node(a).data.iter().find(|x| **x < S::zero()) {
            return Err(Error::Domain(format!("sqrt of negative value {bad}")));
        }
        self.unary_elementwise(a, "sqrt", |x| x.sqrt(), Op::Sqrt(a))
    }

    // ---- contractions ----

    /// Matrix product over the two trailing axes.
    ///
    /// `a` is `[..batch, m, k]` and `b` is `[..batch, k, n]`. The leading
    /// batch axes must match elementwise, or either side may be a plain
    /// rank-2 matrix, which is then shared across the other side's batch.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (asym, bsym) = (self.node(a), self.node(b));
        let (a_lead, m, ka) = split_matrix(&asym.shape, "matmul left operand")?;
        let (b_lead, kb, n) = split_matrix(&bsym.shape, "matmul right operand")?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {} vs {}",
                fmt_shape(&asym.shape),
                fmt_shape(&bsym.shape)
            )));
        }
        let lead: Vec<usize> = if a_lead == b_lead {
            a_lead.to_vec()
        } else if a_lead.is_empty() {
            b_lead.to_vec()
        } else if b_lead.is_empty() {
            a_lead.to_vec()
        } else {
            return Err(Error::Shape(format!(
                "matmul batch axes differ: {} vs {}",
                fmt_shape(&asym.shape),
                fmt_shape(&bsym.shape)
            )));
        };
        let batch = numel_of(&lead);
        let (a_batched, b_batched) = (!a_lead.is_empty(), !b_lead.is_empty());
        let mut out = vec![S::zero(); batch * m * n];
        for t in 0..batch {
            let ao = if a_batched { t * m * ka } else { 0 };
            let bo = if b_batched { t * ka * n } else { 0 };
            let oo = t * m * n;
            matmul_acc(
                &asym.data[ao..ao + m * ka],
                &bsym.data[bo..bo + ka * n],
                &mut out[oo..oo + m * n],
                m,
                ka,
                n,
            );
        }
        let mut shape = lead;
        shape.extend([m, n]);
        self.push_math(shape, out, Op::Matmul(a, b), "matmul")
    }

    /// Row-wise softmax over the last axis (rank 2 or higher; leading axes
    /// are treated as a batch). Uses max-subtraction, so rows with large
    /// magnitudes stay finite.
    pub fn softmax_rows(&mut self, a: VarId) -> Result<VarId> {
        let an = self.node(a);
        if an.shape.len() < 2 {
            return Err(Error::Shape(format!(
                "softmax needs rank >= 2, got {}",
                fmt_shape(&an.shape)
            )));
        }
        let cols = *an.shape.last().expect("rank checked above");
        if cols == 0 {
            return Err(Error::Shape("softmax over empty rows".into()));
        }
        let mut out = Vec::with_capacity(an.data.len());
        for row in an.data.chunks(cols) {
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            let start = out.len();
            for &x in row {
                let e = (x - max).exp();
                sum = sum + e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v = *v / sum;
            }
        }
        self.push_math(an.shape.clone(), out, Op::Softmax(a), "softmax")
    }

    // ---- reductions ----

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let (shape, data) = self.reduce_axis(a, axis, "sum_axis", false)?;
        self.push_math(shape, data, Op::SumAxis(a, axis), "sum_axis")
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let (shape, data) = self.reduce_axis(a, axis, "mean_axis", true)?;
        self.push_math(shape, data, Op::MeanAxis(a, axis), "mean_axis")
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum_all(&mut self, a: VarId) -> Result<VarId> {
        let total = self.node(a).data.iter().fold(S::zero(), |acc, &x| acc + x);
        self.push_math(vec![], vec![total], Op::SumAll(a), "sum_all")
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean_all(&mut self, a: VarId) -> Result<VarId> {
        let n = self.node(a).data.len();
        if n == 0 {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let total = self.node(a).data.iter().fold(S::zero(), |acc, &x| acc + x);
        let mean = total / S::from_f64(n as f64);
        self.push_math(vec![], vec![mean], Op::MeanAll(a), "mean_all")
    }

    // ---- temporal convolution ----

    /// 1-D convolution along the leading (time) axis.
    ///
    /// `x` is `[T, N, C_in]`, `kernels` is `[K, C_in, C_out]` with odd `K`,
    /// `bias` is `[C_out]`. Frames outside `[0, T)` are zero-padded, so the
    /// output keeps the input length.
    pub fn conv_time(&mut self, x: VarId, kernels: VarId, bias: VarId) -> Result<VarId> {
        let (xn, kn, bn) = (self.node(x), self.node(kernels), self.node(bias));
        let [t_len, n_len, c_in] = rank3(&xn.shape, "conv_time input")?;
        let [k_len, kc_in, c_out] = rank3(&kn.shape, "conv_time kernels")?;
        if k_len % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv_time kernel length must be odd, got {k_len}"
            )));
        }
        if kc_in != c_in {
            return Err(Error::Shape(format!(
                "conv_time channel mismatch: input has {c_in}, kernels expect {kc_in}"
            )));
        }
        if bn.shape != [c_out] {
            return Err(Error::Shape(format!(
                "conv_time bias shape {} does not match {c_out} output channels",
                fmt_shape(&bn.shape)
            )));
        }
        let half = (k_len / 2) as isize;
        let mut out = vec![S::zero(); t_len * n_len * c_out];
        for t in 0..t_len {
            for n in 0..n_len {
                let orow = (t * n_len + n) * c_out;
                out[orow..orow + c_out].copy_from_slice(&bn.data);
                for dk in 0..k_len {
                    let s = t as isize + dk as isize - half;
                    if s < 0 || s >= t_len as isize {
                        continue;
                    }
                    let xrow = (s as usize * n_len + n) * c_in;
                    for ci in 0..c_in {
                        let xv = xn.data[xrow + ci];
                        let krow = (dk * c_in + ci) * c_out;
                        for co in 0..c_out {
                            out[orow + co] = out[orow + co] + xv * kn.data[krow + co];
                        }
                    }
                }
            }
        }
        self.push_math(
            vec![t_len, n_len, c_out],
            out,
            Op::ConvTime { x, kernels, bias },
            "conv_time",
        )
    }

    // ---- structural ----

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&mut self, a: VarId, new_shape: Vec<usize>) -> Result<VarId> {
        let an = self.node(a);
        if numel_of(&new_shape) != an.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {}",
                fmt_shape(&an.shape),
                fmt_shape(&new_shape)
            )));
        }
        let data = an.data.clone();
        let diff = an.diff;
        Ok(self.push(new_shape, data, Op::Reshape(a), diff))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: VarId, perm: &[usize]) -> Result<VarId> {
        let an = self.node(a);
        let rank = an.shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!(
                "invalid axis permutation {perm:?} for shape {}",
                fmt_shape(&an.shape)
            )));
        }
        let (shape, data) = permute_data(&an.data, &an.shape, perm);
        let diff = an.diff;
        Ok(self.push(shape, data, Op::Permute(a, perm.to_vec()), diff))
    }

    /// Slice of length `len` starting at `start` along `axis`; other axes
    /// are kept whole.
    pub fn narrow(&mut self, a: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        let an = self.node(a);
        if axis >= an.shape.len() {
            return Err(Error::Shape(format!(
                "narrow axis {axis} out of range for {}",
                fmt_shape(&an.shape)
            )));
        }
        let ext = an.shape[axis];
        if len == 0 || start + len > ext {
            return Err(Error::Shape(format!(
                "narrow [{start}, {start}+{len}) out of range for axis {axis} of extent {ext}"
            )));
        }
        let outer: usize = an.shape[..axis].iter().product();
        let inner: usize = an.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&an.data[base..base + len * inner]);
        }
        let mut shape = an.shape.clone();
        shape[axis] = len;
        let diff = an.diff;
        Ok(self.push(shape, data, Op::Narrow { x: a, axis, start, len }, diff))
    }

    /// Adds `b` to `a` where `b`'s shape is a trailing suffix of `a`'s;
    /// `b` is repeated over the leading axes. Equal shapes degenerate to
    /// plain addition.
    pub fn broadcast_add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (an, bn) = (self.node(a), self.node(b));
        if !an.shape.ends_with(&bn.shape) {
            return Err(Error::Shape(format!(
                "broadcast_add: {} is not a trailing suffix of {}",
                fmt_shape(&bn.shape),
                fmt_shape(&an.shape)
            )));
        }
        let bnumel = bn.data.len();
        if bnumel == 0 {
            return Err(Error::Shape("broadcast_add with empty addend".into()));
        }
        let mut out = an.data.clone();
        for chunk in out.chunks_mut(bnumel) {
            for (o, &bv) in chunk.iter_mut().zip(bn.data.iter()) {
                *o = *o + bv;
            }
        }
        let shape = an.shape.clone();
        self.push_math(shape, out, Op::BroadcastAdd(a, b), "broadcast_add")
    }

    // ---- backward ----

    /// Runs the chain rule from a scalar root back to the variable leaves.
    ///
    /// Gradients are freshly computed on every call; repeated calls on the
    /// same tape return identical values. Fails if the root is not a single
    /// element or if no variable is reachable from it.
    pub fn backward(&self, root: VarId) -> Result<Gradients<S>> {
        let rn = self.node(root);
        if rn.data.len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward root must be a scalar, got shape {}",
                fmt_shape(&rn.shape)
            )));
        }
        if !rn.diff {
            return Err(Error::Autodiff(
                "backward root does not depend on any variable".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].diff {
                continue;
            }
            let Some(g) = std::mem::take(&mut grads[i]) else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Constant => unreachable!("constants are never differentiable"),
                Op::Variable => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &g));
                    self.accum(&mut grads, *b, |dst| add_assign(dst, &g));
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &g));
                    self.accum(&mut grads, *b, |dst| sub_assign(dst, &g));
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (&self.node(*a).data, &self.node(*b).data);
                    self.accum(&mut grads, *a, |dst| mul_add_assign(dst, &g, bd));
                    self.accum(&mut grads, *b, |dst| mul_add_assign(dst, &g, ad));
                }
                Op::AddScalar(a) => {
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &g));
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.accum(&mut grads, *a, |dst| scaled_add_assign(dst, &g, c));
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].data;
                    self.accum(&mut grads, *a, |dst| mul_add_assign(dst, &g, y));
                }
                Op::Log(a) => {
                    let x = &self.node(*a).data;
                    self.accum(&mut grads, *a, |dst| {
                        for ((d, &gv), &xv) in dst.iter_mut().zip(&g).zip(x) {
                            *d = *d + gv / xv;
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].data;
                    self.accum(&mut grads, *a, |dst| {
                        for ((d, &gv), &yv) in dst.iter_mut().zip(&g).zip(y) {
                            *d = *d + gv * (S::one() - yv * yv);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = &self.node(*a).data;
                    self.accum(&mut grads, *a, |dst| {
                        for ((d, &gv), &xv) in dst.iter_mut().zip(&g).zip(x) {
                            if xv > S::zero() {
                                *d = *d + gv;
                            }
                        }
                    });
                }
                Op::Square(a) => {
                    let x = &self.node(*a).data;
                    let two = S::from_f64(2.0);
                    self.accum(&mut grads, *a, |dst| {
                        for ((d, &gv), &xv) in dst.iter_mut().zip(&g).zip(x) {
                            *d = *d + gv * two * xv;
                        }
                    });
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[i].data;
                    let half = S::from_f64(0.5);
                    self.accum(&mut grads, *a, |dst| {
                        for ((d, &gv), &yv) in dst.iter_mut().zip(&g).zip(y) {
                            *d = *d + gv * half / yv;
                        }
                    });
                }
                Op::Matmul(a, b) => self.backward_matmul(&mut grads, *a, *b, &g),
                Op::Softmax(a) => {
                    let y = &self.nodes[i].data;
                    let cols = *self.nodes[i].shape.last().expect("softmax output rank >= 2");
                    self.accum(&mut grads, *a, |dst| {
                        for ((drow, grow), yrow) in dst
                            .chunks_mut(cols)
                            .zip(g.chunks(cols))
                            .zip(y.chunks(cols))
                        {
                            let mut dot = S::zero();
                            for (&gv, &yv) in grow.iter().zip(yrow) {
                                dot = dot + gv * yv;
                            }
                            for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d = *d + yv * (gv - dot);
                            }
                        }
                    });
                }
                Op::SumAxis(a, axis) => {
                    let in_shape = &self.node(*a).shape;
                    let spread = spread_axis(&g, in_shape, *axis, S::one());
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &spread));
                }
                Op::MeanAxis(a, axis) => {
                    let in_shape = &self.node(*a).shape;
                    let inv = S::one() / S::from_f64(in_shape[*axis] as f64);
                    let spread = spread_axis(&g, in_shape, *axis, inv);
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &spread));
                }
                Op::SumAll(a) => {
                    let gv = g[0];
                    self.accum(&mut grads, *a, |dst| {
                        for d in dst.iter_mut() {
                            *d = *d + gv;
                        }
                    });
                }
                Op::MeanAll(a) => {
                    let n = self.node(*a).data.len();
                    let gv = g[0] / S::from_f64(n as f64);
                    self.accum(&mut grads, *a, |dst| {
                        for d in dst.iter_mut() {
                            *d = *d + gv;
                        }
                    });
                }
                Op::ConvTime { x, kernels, bias } => {
                    self.backward_conv_time(&mut grads, *x, *kernels, *bias, &g)
                }
                Op::Reshape(a) => {
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &g));
                }
                Op::Permute(a, perm) => {
                    let out_shape = &self.nodes[i].shape;
                    let mut inv = vec![0; perm.len()];
                    for (d, &p) in perm.iter().enumerate() {
                        inv[p] = d;
                    }
                    let (_, unpermuted) = permute_data(&g, out_shape, &inv);
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &unpermuted));
                }
                Op::Narrow { x, axis, start, len } => {
                    let in_shape = &self.node(*x).shape;
                    let ext = in_shape[*axis];
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[*axis + 1..].iter().product();
                    let (start, len) = (*start, *len);
                    self.accum(&mut grads, *x, |dst| {
                        for o in 0..outer {
                            let dbase = (o * ext + start) * inner;
                            let gbase = o * len * inner;
                            add_assign(
                                &mut dst[dbase..dbase + len * inner],
                                &g[gbase..gbase + len * inner],
                            );
                        }
                    });
                }
                Op::BroadcastAdd(a, b) => {
                    let bnumel = self.node(*b).data.len();
                    self.accum(&mut grads, *a, |dst| add_assign(dst, &g));
                    self.accum(&mut grads, *b, |dst| {
                        for chunk in g.chunks(bnumel) {
                            add_assign(dst, chunk);
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_matmul(&self, grads: &mut [Option<Vec<S>>], a: VarId, b: VarId, g: &[S]) {
        let (an, bn) = (self.node(a), self.node(b));
        let (a_lead, m, k) = split_matrix(&an.shape, "matmul").expect("validated at forward");
        let (b_lead, _, n) = split_matrix(&bn.shape, "matmul").expect("validated at forward");
        let (a_batched, b_batched) = (!a_lead.is_empty(), !b_lead.is_empty());
        let batch = g.len() / (m * n);
        if self.node(a).diff {
            let mut ga = vec![S::zero(); an.data.len()];
            for t in 0..batch {
                let ao = if a_batched { t * m * k } else { 0 };
                let bo = if b_batched { t * k * n } else { 0 };
                let go = t * m * n;
                // ga += g . b^T
                for i in 0..m {
                    for kk in 0..k {
                        let mut acc = S::zero();
                        for j in 0..n {
                            acc = acc + g[go + i * n + j] * bn.data[bo + kk * n + j];
                        }
                        ga[ao + i * k + kk] = ga[ao + i * k + kk] + acc;
                    }
                }
            }
            self.accum(grads, a, |dst| add_assign(dst, &ga));
        }
        if self.node(b).diff {
            let mut gb = vec![S::zero(); bn.data.len()];
            for t in 0..batch {
                let ao = if a_batched { t * m * k } else { 0 };
                let bo = if b_batched { t * k * n } else { 0 };
                let go = t * m * n;
                // gb += a^T . g
                for kk in 0..k {
                    for i in 0..m {
                        let av = an.data[ao + i * k + kk];
                        let grow = go + i * n;
                        let brow = bo + kk * n;
                        for j in 0..n {
                            gb[brow + j] = gb[brow + j] + av * g[grow + j];
                        }
                    }
                }
            }
            self.accum(grads, b, |dst| add_assign(dst, &gb));
        }
    }

    fn backward_conv_time(
        &self,
        grads: &mut [Option<Vec<S>>],
        x: VarId,
        kernels: VarId,
        bias: VarId,
        g: &[S],
    ) {
        let (xn, kn) = (self.node(x), self.node(kernels));
        let [t_len, n_len, c_in] = rank3(&xn.shape, "conv_time").expect("validated at forward");
        let [k_len, _, c_out] = rank3(&kn.shape, "conv_time").expect("validated at forward");
        let half = (k_len / 2) as isize;
        if self.node(x).diff {
            let mut gx = vec![S::zero(); xn.data.len()];
            for t in 0..t_len {
                for n in 0..n_len {
                    let grow = (t * n_len + n) * c_out;
                    for dk in 0..k_len {
                        let s = t as isize + dk as isize - half;
                        if s < 0 || s >= t_len as isize {
                            continue;
                        }
                        let xrow = (s as usize * n_len + n) * c_in;
                        for ci in 0..c_in {
                            let krow = (dk * c_in + ci) * c_out;
                            let mut acc = S::zero();
                            for co in 0..c_out {
                                acc = acc + kn.data[krow + co] * g[grow + co];
                            }
                            gx[xrow + ci] = gx[xrow + ci] + acc;
                        }
                    }
                }
            }
            self.accum(grads, x, |dst| add_assign(dst, &gx));
        }
        if self.node(kernels).diff {
            let mut gk = vec![S::zero(); kn.data.len()];
            for t in 0..t_len {
                for n in 0..n_len {
                    let grow = (t * n_len + n) * c_out;
                    for dk in 0..k_len {
                        let s = t as isize + dk as isize - half;
                        if s < 0 || s >= t_len as isize {
                            continue;
                        }
                        let xrow = (s as usize * n_len + n) * c_in;
                        for ci in 0..c_in {
                            let xv = xn.data[xrow + ci];
                            let krow = (dk * c_in + ci) * c_out;
                            for co in 0..c_out {
                                gk[krow + co] = gk[krow + co] + xv * g[grow + co];
                            }
                        }
                    }
                }
            }
            self.accum(grads, kernels, |dst| add_assign(dst, &gk));
        }
        if self.node(bias).diff {
            self.accum(grads, bias, |dst| {
                for chunk in g.chunks(dst.len()) {
                    add_assign(dst, chunk);
                }
            });
        }
    }

    // ---- internals ----

    fn node(&self, v: VarId) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, diff: bool) -> VarId {
        debug_assert_eq!(numel_of(&shape), data.len());
        self.nodes.push(Node { shape, data, op, diff });
        VarId(self.nodes.len() - 1)
    }

    /// Push for computed values: enforces the finite-results contract.
    fn push_math(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, name: &str) -> Result<VarId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite result from {name}")));
        }
        let diff = self.op_diff(&op);
        Ok(self.push(shape, data, op, diff))
    }

    fn op_diff(&self, op: &Op<S>) -> bool {
        let d = |v: &VarId| self.nodes[v.0].diff;
        match op {
            Op::Constant | Op::Variable => unreachable!("leaves are pushed directly"),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::BroadcastAdd(a, b) => {
                d(a) || d(b)
            }
            Op::AddScalar(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Softmax(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Narrow { x: a, .. } => d(a),
            Op::ConvTime { x, kernels, bias } => d(x) || d(kernels) || d(bias),
        }
    }

    fn binary_elementwise(
        &mut self,
        a: VarId,
        b: VarId,
        name: &str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<VarId> {
        let (an, bn) = (self.node(a), self.node(b));
        if an.shape != bn.shape {
            return Err(Error::Shape(format!(
                "{name} needs equal shapes, got {} vs {}",
                fmt_shape(&an.shape),
                fmt_shape(&bn.shape)
            )));
        }
        let data: Vec<S> = an
            .data
            .iter()
            .zip(bn.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = an.shape.clone();
        self.push_math(shape, data, op, name)
    }

    fn unary_elementwise(
        &mut self,
        a: VarId,
        name: &str,
        f: impl Fn(S) -> S,
        op: Op<S>,
    ) -> Result<VarId> {
        let an = self.node(a);
        let data: Vec<S> = an.data.iter().map(|&x| f(x)).collect();
        let shape = an.shape.clone();
        self.push_math(shape, data, op, name)
    }

    fn reduce_axis(
        &self,
        a: VarId,
        axis: usize,
        name: &str,
        mean: bool,
    ) -> Result<(Vec<usize>, Vec<S>)> {
        let an = self.node(a);
        if axis >= an.shape.len() {
            return Err(Error::Shape(format!(
                "{name} axis {axis} out of range for {}",
                fmt_shape(&an.shape)
            )));
        }
        let ext = an.shape[axis];
        if mean && ext == 0 {
            return Err(Error::Domain(format!("{name} over an empty axis")));
        }
        let outer: usize = an.shape[..axis].iter().product();
        let inner: usize = an.shape[axis + 1..].iter().product();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let base = (o * ext + e) * inner;
                let obase = o * inner;
                for i in 0..inner {
                    out[obase + i] = out[obase + i] + an.data[base + i];
                }
            }
        }
        if mean {
            let inv = S::one() / S::from_f64(ext as f64);
            for v in &mut out {
                *v = *v * inv;
            }
        }
        let mut shape = an.shape.clone();
        shape.remove(axis);
        Ok((shape, out))
    }

    /// Accumulates into the gradient slot of `v` if gradients flow there.
    fn accum(&self, grads: &mut [Option<Vec<S>>], v: VarId, f: impl FnOnce(&mut [S])) {
        if !self.nodes[v.0].diff {
            return;
        }
        let len = self.nodes[v.0].data.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); len]);
        f(slot);
    }
}

/// Splits a rank >= 2 shape into (leading batch axes, rows, cols).
fn split_matrix<'a>(shape: &'a [usize], what: &str) -> Result<(&'a [usize], usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "{what} needs rank >= 2, got {}",
            fmt_shape(shape)
        )));
    }
    let (lead, mat) = shape.split_at(shape.len() - 2);
    Ok((lead, mat[0], mat[1]))
}

fn rank3(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    if let [a, b, c] = *shape {
        Ok([a, b, c])
    } else {
        Err(Error::Shape(format!(
            "{what} needs rank 3, got {}",
            fmt_shape(shape)
        )))
    }
}

/// `out[i,j] += a[i,:] . b[:,j]` for row-major `m x k` and `k x n` blocks.
fn matmul_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = kk * n;
            let orow = i * n;
            for j in 0..n {
                out[orow + j] = out[orow + j] + av * b[brow + j];
            }
        }
    }
}

/// Copies `data` (of `shape`) into the axis order given by `perm`;
/// returns the permuted shape and data.
fn permute_data<S: Scalar>(data: &[S], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<S>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = crate::tensor::strides_of(shape);
    // Input stride of each output axis; `flat` walks the input as an
    // odometer counts output indices.
    let axis_stride: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..data.len() {
        out.push(data[flat]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += axis_stride[d];
            if idx[d] < out_shape[d] {
                break;
            }
            flat -= idx[d] * axis_stride[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// Broadcasts `g` (the reduced tensor) back over `axis` of `in_shape`,
/// scaling each copy by `scale`.
fn spread_axis<S: Scalar>(g: &[S], in_shape: &[usize], axis: usize, scale: S) -> Vec<S> {
    let ext = in_shape[axis];
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let mut out = vec![S::zero(); outer * ext * inner];
    for o in 0..outer {
        let gbase = o * inner;
        for e in 0..ext {
            let base = (o * ext + e) * inner;
            for i in 0..inner {
                out[base + i] = g[gbase + i] * scale;
            }
        }
    }
    out
}

fn add_assign<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn sub_assign<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d - s;
    }
}

fn mul_add_assign<S: Scalar>(dst: &mut [S], g: &[S], other: &[S]) {
    for ((d, &gv), &ov) in dst.iter_mut().zip(g).zip(other) {
        *d = *d + gv * ov;
    }
}

fn scaled_add_assign<S: Scalar>(dst: &mut [S], g: &[S], c: S) {
    for (d, &gv) in dst.iter_mut().zip(g) {
        *d = *d + gv * c;
    }
}
