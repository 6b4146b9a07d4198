//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its output value and enough saved state
//! to run its backward rule. Nodes are appended in evaluation order, so the
//! tape is topologically sorted by construction and `backward` is a single
//! reverse sweep that accumulates into operand gradients.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::mamba::scan::{self, ScanDims, ScanStrategy};
use crate::tensor::{check_norm_params, layernorm_rows, numel, softmax_along, AxisLayout, MatmulDims, Scalar, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Silu,
    Gelu,
    Tanh,
    Exp,
    Softplus,
    Sigmoid,
    Square,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Silu => "silu",
            Unary::Gelu => "gelu",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Square => "square",
        }
    }

    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Unary::Silu => x * sigmoid(x),
            Unary::Gelu => {
                let u = F::of(GELU_C) * (x + F::of(GELU_K) * x * x * x);
                F::of(0.5) * x * (F::one() + u.tanh())
            }
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Square => x * x,
        }
    }

    fn derivative<F: Scalar>(self, x: F, y: F) -> F {
        let one = F::one();
        match self {
            Unary::Silu => {
                let s = sigmoid(x);
                s * (one + x * (one - s))
            }
            Unary::Gelu => {
                let u = F::of(GELU_C) * (x + F::of(GELU_K) * x * x * x);
                let t = u.tanh();
                let du = F::of(GELU_C) * (one + F::of(3.0 * GELU_K) * x * x);
                F::of(0.5) * (one + t) + F::of(0.5) * x * (one - t * t) * du
            }
            Unary::Tanh => one - y * y,
            Unary::Exp => y,
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (one - y),
            Unary::Square => F::of(2.0) * x,
        }
    }
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

enum Op<F> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    Matmul(usize, usize, MatmulDims),
    Unary(usize, Unary),
    Softmax(usize, AxisLayout),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        means: Vec<F>,
        rstds: Vec<F>,
    },
    Sum(usize),
    Mean(usize),
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    Reshape(usize),
    Transpose {
        x: usize,
        in_shape: Vec<usize>,
        axes: (usize, usize),
    },
    Slice {
        x: usize,
        layout: AxisLayout,
        start: usize,
        len: usize,
    },
    Reverse(usize, AxisLayout),
    Scan {
        inputs: [usize; 5],
        dims: ScanDims,
        states: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records ops for one forward pass. A tape and its variables belong to a
/// single thread.
pub struct Tape<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
    check_finite: bool,
    scan_strategy: ScanStrategy,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Scalar> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Scalar> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<F: Scalar> Tape<F> {
    /// Non-finite checks run in debug builds and always at 64-bit precision.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite: cfg!(debug_assertions) || F::NAME == "f64",
            scan_strategy: ScanStrategy::Sequential,
        }
    }

    pub fn with_scan_strategy(mut self, strategy: ScanStrategy) -> Self {
        self.scan_strategy = strategy;
        self
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, true)
    }

    fn push_unchecked(&self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[usize]) -> Result<Var<'_, F>> {
        let (requires_grad, inputs_finite) = {
            let nodes = self.nodes.borrow();
            let rg = inputs.iter().any(|&i| nodes[i].requires_grad);
            let fin = !self.check_finite || inputs.iter().all(|&i| nodes[i].value.is_finite());
            (rg, fin)
        };
        if self.check_finite && inputs_finite && !value.is_finite() {
            return Err(Error::Numerical { op: name });
        }
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn value_of(&self, id: usize) -> Ref<'_, Tensor<F>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Runs the reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let rootv = &nodes[root.id].value;
        if rootv.numel() != 1 {
            return Err(Error::NonScalarRoot(rootv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(vec![F::one()]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backward_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradient buffer for `id`, created zeroed on first touch. `None` when the
/// node does not take part in differentiation.
fn slot<'g, F: Scalar>(nodes: &[Node<F>], grads: &'g mut [Option<Vec<F>>], id: usize) -> Option<&'g mut Vec<F>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![F::zero(); n]))
}

/// Adds `g` (shaped like the output) into an operand that may have been
/// broadcast over leading axes.
fn acc_broadcast<F: Scalar>(dst: &mut [F], g: &[F]) {
    let n = dst.len();
    for (i, &v) in g.iter().enumerate() {
        dst[i % n] += v;
    }
}

fn backward_node<F: Scalar>(nodes: &[Node<F>], node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
    let val = |id: usize| nodes[id].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(da) = slot(nodes, grads, *a) {
                acc_broadcast(da, g);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                acc_broadcast(db, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = slot(nodes, grads, *a) {
                acc_broadcast(da, g);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                let n = db.len();
                for (i, &v) in g.iter().enumerate() {
                    db[i % n] -= v;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(da) = slot(nodes, grads, *a) {
                let nb = bv.len();
                for (i, &v) in g.iter().enumerate() {
                    da[i] += v * bv[i % nb];
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                let nb = db.len();
                for (i, &v) in g.iter().enumerate() {
                    db[i % nb] += v * av[i];
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(da) = slot(nodes, grads, *a) {
                for (d, &v) in da.iter_mut().zip(g) {
                    *d += v * *s;
                }
            }
        }
        Op::Matmul(a, b, dims) => {
            let (av, bv) = (val(*a), val(*b));
            let mut da = nodes[*a].requires_grad.then(|| vec![F::zero(); av.len()]);
            let mut db = nodes[*b].requires_grad.then(|| vec![F::zero(); bv.len()]);
            dims.backward(av, bv, g, da.as_deref_mut(), db.as_deref_mut());
            for (id, part) in [(*a, da), (*b, db)] {
                if let (Some(part), Some(dst)) = (part, slot(nodes, grads, id)) {
                    for (d, v) in dst.iter_mut().zip(part) {
                        *d += v;
                    }
                }
            }
        }
        Op::Unary(a, kind) => {
            let xv = val(*a);
            let yv = node.value.data();
            if let Some(da) = slot(nodes, grads, *a) {
                for i in 0..g.len() {
                    da[i] += g[i] * kind.derivative(xv[i], yv[i]);
                }
            }
        }
        Op::Softmax(a, l) => {
            let y = node.value.data();
            if let Some(da) = slot(nodes, grads, *a) {
                for o in 0..l.outer {
                    for j in 0..l.inner {
                        let mut dot = F::zero();
                        for i in 0..l.len {
                            let k = l.index(o, i, j);
                            dot += g[k] * y[k];
                        }
                        for i in 0..l.len {
                            let k = l.index(o, i, j);
                            da[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            means,
            rstds,
        } => {
            let xv = val(*x);
            let gv = val(*gain);
            let d = gv.len();
            let rows = means.len();
            let df = F::of(d as f64);
            let xhat = |r: usize, c: usize| (xv[r * d + c] - means[r]) * rstds[r];
            if let Some(dg) = slot(nodes, grads, *gain) {
                for r in 0..rows {
                    for c in 0..d {
                        dg[c] += g[r * d + c] * xhat(r, c);
                    }
                }
            }
            if let Some(dbias) = slot(nodes, grads, *bias) {
                for r in 0..rows {
                    for c in 0..d {
                        dbias[c] += g[r * d + c];
                    }
                }
            }
            if let Some(dx) = slot(nodes, grads, *x) {
                for r in 0..rows {
                    let mut m1 = F::zero();
                    let mut m2 = F::zero();
                    for c in 0..d {
                        let dxh = g[r * d + c] * gv[c];
                        m1 += dxh;
                        m2 += dxh * xhat(r, c);
                    }
                    m1 /= df;
                    m2 /= df;
                    for c in 0..d {
                        let dxh = g[r * d + c] * gv[c];
                        dx[r * d + c] += rstds[r] * (dxh - m1 - xhat(r, c) * m2);
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(da) = slot(nodes, grads, *a) {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mean(a) => {
            if let Some(da) = slot(nodes, grads, *a) {
                let s = g[0] / F::of(da.len() as f64);
                for d in da.iter_mut() {
                    *d += s;
                }
            }
        }
        Op::Concat {
            inputs,
            outer,
            inner,
            lens,
        } => {
            let total: usize = lens.iter().sum();
            let mut offset = 0;
            for (&inp, &len) in inputs.iter().zip(lens) {
                if let Some(di) = slot(nodes, grads, inp) {
                    for o in 0..*outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut di[o * len * inner..(o + 1) * len * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = slot(nodes, grads, *a) {
                for (d, &v) in da.iter_mut().zip(g) {
                    *d += v;
                }
            }
        }
        Op::Transpose { x, in_shape, axes } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                let mut out_shape = in_shape.clone();
                out_shape.swap(axes.0, axes.1);
                let back = transpose_data(g, &out_shape, axes.0, axes.1);
                for (d, v) in dx.iter_mut().zip(back) {
                    *d += v;
                }
            }
        }
        Op::Slice { x, layout, start, len } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                let inner = layout.inner;
                for o in 0..layout.outer {
                    for i in 0..*len {
                        let src = &g[(o * len + i) * inner..(o * len + i + 1) * inner];
                        let base = layout.index(o, start + i, 0);
                        for (d, &s) in dx[base..base + inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        Op::Reverse(x, l) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                for o in 0..l.outer {
                    for i in 0..l.len {
                        for j in 0..l.inner {
                            dx[l.index(o, l.len - 1 - i, j)] += g[l.index(o, i, j)];
                        }
                    }
                }
            }
        }
        Op::Scan { inputs, dims, states } => {
            let [x, delta, a, b, c] = *inputs;
            let grads_in = scan::backward(*dims, val(x), val(delta), val(a), val(b), val(c), states, g);
            for (id, gi) in [x, delta, a, b, c].into_iter().zip(grads_in) {
                if let Some(d) = slot(nodes, grads, id) {
                    for (dst, v) in d.iter_mut().zip(gi) {
                        *dst += v;
                    }
                }
            }
        }
    }
}

fn transpose_data<F: Scalar>(x: &[F], shape: &[usize], a0: usize, a1: usize) -> Vec<F> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(a0, a1);
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(a0, a1);

    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let src: usize = idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum();
        out.push(x[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

fn suffix_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Gradients from one backward pass, addressable by any recorded variable.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<Tensor<F>> {
        self.get_id(var.id)
    }

    pub(crate) fn get_id(&self, id: usize) -> Option<Tensor<F>> {
        self.grads[id]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[id].clone(), g.clone()))
    }

    /// Gradient, or zeros shaped like the variable when it was unreachable.
    pub fn get_or_zeros(&self, var: Var<'_, F>) -> Tensor<F> {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }
}

impl<'t, F: Scalar> Var<'t, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn value(&self) -> Tensor<F> {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    pub fn item(&self) -> Result<F> {
        self.tape.value_of(self.id).item()
    }

    fn binary(&self, other: &Var<'t, F>, name: &'static str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var<'t, F>> {
        let out = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            suffix_broadcast(name, a.shape(), b.shape())?;
            let (ad, bd) = (a.data(), b.data());
            let nb = bd.len();
            let data = ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        self.tape.push(name, out, op, &[self.id, other.id])
    }

    /// Elementwise sum; `other` may broadcast over leading axes.
    pub fn add(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, s: F) -> Result<Var<'t, F>> {
        let out = self.tape.value_of(self.id).map(|v| v * s);
        self.tape.push("scale", out, Op::Scale(self.id, s), &[self.id])
    }

    pub fn matmul(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        let (out, dims) = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            let dims = MatmulDims::resolve(a.shape(), b.shape())?;
            let mut out = vec![F::zero(); dims.out_numel()];
            dims.forward(a.data(), b.data(), &mut out);
            (Tensor::from_parts(dims.out_shape(a.shape()), out), dims)
        };
        self.tape
            .push("matmul", out, Op::Matmul(self.id, other.id, dims), &[self.id, other.id])
    }

    /// `self · weight + bias` over the last axis.
    pub fn linear(&self, weight: &Var<'t, F>, bias: Option<&Var<'t, F>>) -> Result<Var<'t, F>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn unary(&self, kind: Unary) -> Result<Var<'t, F>> {
        let out = self.tape.value_of(self.id).map(|v| kind.apply(v));
        self.tape.push(kind.name(), out, Op::Unary(self.id, kind), &[self.id])
    }

    pub fn silu(&self) -> Result<Var<'t, F>> {
        self.unary(Unary::Silu)
    }
    pub fn gelu(&self) -> Result<Var<'t, F>> {
        self.unary(Unary::Gelu)
    }
    pub fn tanh(&self) -> Result<Var<'t, F>> {
        self.unary(Unary::Tanh)
    }
    pub fn exp(&self) -> Result<Var<'t, F>> {
        self.unary(Unary::Exp)
    }
    pub fn softplus(&self) -> Result<Var<'t, F>> {
        self.unary(Unary::Softplus)
    }
    pub fn sigmoid(&self) -> Result<Var<'t, F>> {
        self.unary(Unary::Sigmoid)
    }
    pub fn square(&self) -> Result<Var<'t, F>> {
        self.unary(Unary::Square)
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, F>> {
        let (out, layout) = {
            let x = self.tape.value_of(self.id);
            let layout = AxisLayout::new(x.shape(), axis, "softmax")?;
            (
                Tensor::from_parts(x.shape().to_vec(), softmax_along(x.data(), layout)),
                layout,
            )
        };
        self.tape.push("softmax", out, Op::Softmax(self.id, layout), &[self.id])
    }

    pub fn layernorm(&self, gain: &Var<'t, F>, bias: &Var<'t, F>, eps: f64) -> Result<Var<'t, F>> {
        let (out, means, rstds) = {
            let x = self.tape.value_of(self.id);
            let gv = self.tape.value_of(gain.id);
            let bv = self.tape.value_of(bias.id);
            let d = check_norm_params(x.shape(), gv.shape(), bv.shape())?;
            let (out, means, rstds) = layernorm_rows(x.data(), gv.data(), bv.data(), d, F::of(eps));
            (Tensor::from_parts(x.shape().to_vec(), out), means, rstds)
        };
        self.tape.push(
            "layernorm",
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                means,
                rstds,
            },
            &[self.id, gain.id, bias.id],
        )
    }

    pub fn sum(&self) -> Result<Var<'t, F>> {
        let s = self.tape.value_of(self.id).data().iter().copied().sum::<F>();
        self.tape.push("sum", Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'t, F>> {
        let v = self.tape.value_of(self.id);
        if v.numel() == 0 {
            return Err(Error::InvalidShape {
                op: "mean",
                msg: "mean of an empty tensor".into(),
            });
        }
        let m = v.data().iter().copied().sum::<F>() / F::of(v.numel() as f64);
        drop(v);
        self.tape.push("mean", Tensor::scalar(m), Op::Mean(self.id), &[self.id])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, F>> {
        let out = self.tape.value_of(self.id).reshape(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    pub fn transpose(&self, a0: usize, a1: usize) -> Result<Var<'t, F>> {
        let (out, in_shape) = {
            let x = self.tape.value_of(self.id);
            let rank = x.rank();
            if a0 >= rank || a1 >= rank {
                return Err(Error::InvalidShape {
                    op: "transpose",
                    msg: format!("axes ({a0}, {a1}) out of range for shape {:?}", x.shape()),
                });
            }
            let mut out_shape = x.shape().to_vec();
            out_shape.swap(a0, a1);
            let data = transpose_data(x.data(), x.shape(), a0, a1);
            (Tensor::from_parts(out_shape, data), x.shape().to_vec())
        };
        self.tape.push(
            "transpose",
            out,
            Op::Transpose {
                x: self.id,
                in_shape,
                axes: (a0, a1),
            },
            &[self.id],
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
        let (out, layout) = {
            let x = self.tape.value_of(self.id);
            let layout = AxisLayout::new(x.shape(), axis, "slice")?;
            if start + len > layout.len {
                return Err(Error::InvalidShape {
                    op: "slice",
                    msg: format!(
                        "range {start}..{} exceeds extent {} of axis {axis}",
                        start + len,
                        layout.len
                    ),
                });
            }
            let xd = x.data();
            let mut data = Vec::with_capacity(layout.outer * len * layout.inner);
            for o in 0..layout.outer {
                let base = layout.index(o, start, 0);
                data.extend_from_slice(&xd[base..base + len * layout.inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = len;
            (Tensor::from_parts(shape, data), layout)
        };
        self.tape.push(
            "slice",
            out,
            Op::Slice {
                x: self.id,
                layout,
                start,
                len,
            },
            &[self.id],
        )
    }

    pub fn reverse(&self, axis: usize) -> Result<Var<'t, F>> {
        let (out, l) = {
            let x = self.tape.value_of(self.id);
            let l = AxisLayout::new(x.shape(), axis, "reverse")?;
            let xd = x.data();
            let mut data = vec![F::zero(); xd.len()];
            for o in 0..l.outer {
                for i in 0..l.len {
                    for j in 0..l.inner {
                        data[l.index(o, i, j)] = xd[l.index(o, l.len - 1 - i, j)];
                    }
                }
            }
            (Tensor::from_parts(x.shape().to_vec(), data), l)
        };
        self.tape.push("reverse", out, Op::Reverse(self.id, l), &[self.id])
    }

    /// Input-conditioned selective scan over `self: [S, I]`; see
    /// [`crate::mamba::scan`] for the recurrence.
    pub fn selective_scan(
        &self,
        delta: &Var<'t, F>,
        a: &Var<'t, F>,
        b: &Var<'t, F>,
        c: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let ids = [self.id, delta.id, a.id, b.id, c.id];
        let (out, dims, states) = {
            let x = self.tape.value_of(self.id);
            let d = self.tape.value_of(delta.id);
            let av = self.tape.value_of(a.id);
            let bv = self.tape.value_of(b.id);
            let cv = self.tape.value_of(c.id);
            let dims = ScanDims::check(x.shape(), d.shape(), av.shape(), bv.shape(), cv.shape())?;
            let disc = scan::discretize(dims, av.data(), bv.data(), d.data())?;
            let (y, states) = scan::run(dims, &disc, cv.data(), x.data(), self.tape.scan_strategy);
            (Tensor::from_parts(x.shape().to_vec(), y), dims, states)
        };
        self.tape.push(
            "selective_scan",
            out,
            Op::Scan {
                inputs: ids,
                dims,
                states,
            },
            &ids,
        )
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t, F: Scalar>(vars: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
    let first = vars.first().ok_or_else(|| Error::InvalidShape {
        op: "concat",
        msg: "no inputs".into(),
    })?;
    let tape = first.tape;
    let (out, outer, inner, lens) = {
        let vals: Vec<_> = vars.iter().map(|v| tape.value_of(v.id)).collect();
        let s0 = vals[0].shape().to_vec();
        if axis >= s0.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {s0:?}"),
            });
        }
        let mut lens = Vec::with_capacity(vals.len());
        for v in &vals {
            let s = v.shape();
            let compatible =
                s.len() == s0.len() && s.iter().zip(&s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: s0.clone(),
                    rhs: s.to_vec(),
                });
            }
            lens.push(s[axis]);
        }
        let outer = numel(&s0[..axis]);
        let inner = numel(&s0[axis + 1..]);
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in vals.iter().zip(&lens) {
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        (Tensor::from_parts(shape, data), outer, inner, lens)
    };
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    tape.push(
        "concat",
        out,
        Op::Concat {
            inputs: ids.clone(),
            outer,
            inner,
            lens,
        },
        &ids,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.mul(&x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.0));
        let z = x.add(&x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros([2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn unary_closed_forms() {
        assert_eq!(Unary::Silu.apply(0.0f64), 0.0);
        assert!((Unary::Softplus.apply(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(Unary::Softplus.apply(1000.0f32).is_finite());
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.param(t(&[3], &[1.0, 1.0, 1.0]));
        let y = a.add(&b).unwrap().sum().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert!(a.add(&tape.constant(t(&[2], &[0.0, 0.0]))).is_err());
    }

    #[test]
    fn slice_concat_reverse_roundtrip() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let head = x.slice(0, 0, 1).unwrap();
        let tail = x.slice(0, 1, 2).unwrap();
        let joined = concat(&[head, tail], 0).unwrap();
        assert_eq!(joined.value().data(), x.value().data());
        let r = x.reverse(0).unwrap();
        assert_eq!(r.value().data(), &[5.0, 6.0, 3.0, 4.0, 1.0, 2.0]);
        let tr = x.transpose(0, 1).unwrap();
        assert_eq!(tr.shape(), vec![2, 3]);
        assert_eq!(tr.value().data(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn numerical_error_on_overflow_from_finite_input() {
        let tape = Tape::<f64>::new().with_finite_checks(true);
        let x = tape.param(Tensor::scalar(1000.0));
        assert!(matches!(x.exp(), Err(Error::Numerical { op: "exp" })));
    }
}
