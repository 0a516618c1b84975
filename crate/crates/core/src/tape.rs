//! Define-by-run reverse-mode differentiation.
//!
//! Every forward op appends a node to the [`Tape`]; [`Tape::backward`] walks the
//! nodes in reverse and applies each op's adjoint once. The tape is rebuilt for
//! every forward pass and is not `Sync`: one tape per thread.
//!
//! Op set: matmul, add/sub/mul with broadcasting, broadcast_to, exp, log,
//! tanh, sigmoid, softplus, reciprocal, concat, slice, transpose, flip, sum,
//! mean, layer_norm, l2_normalize and softmax. Fused kernels with hand-written
//! adjoints plug in through [`CustomOp`].

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shapes, broadcast_source_indices, split_axis, Tensor};

/// A differentiable kernel outside the built-in op set.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: one gradient per input (`None` if the input
    /// has no dependence worth propagating).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    BroadcastTo(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Reciprocal(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Transpose(usize),
    Flip { input: usize, axis: usize },
    Sum { input: usize, axis: Option<usize> },
    Mean { input: usize, axis: Option<usize> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    L2Normalize { input: usize, eps: f64, norms: Vec<f64> },
    Softmax { input: usize, axis: usize },
    Custom { inputs: Vec<usize>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads[var.id].as_ref()
    }

    /// Gradient for `var`, zeros when the loss does not reach it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.grads[var.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }
}

impl Tape {
    /// Finite-value checks are on in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: &Tensor) -> Var<'_> {
        self.push(value.clone(), true, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: &Tensor) -> Var<'_> {
        self.push(value.clone(), false, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(&Tensor::scalar(value))
    }

    /// Records a fused op whose value was computed outside the tape.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        output: Tensor,
        op: Box<dyn CustomOp>,
    ) -> Result<Var<'t>> {
        for v in inputs {
            self.owns(*v)?;
        }
        let name = op.name();
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push_checked(name, output, requires_grad, Op::Custom { inputs: ids, op })
    }

    fn owns(&self, var: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, var.tape) {
            Ok(())
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push_checked(
        &self,
        name: &'static str,
        value: Tensor,
        requires_grad: bool,
        op: Op,
    ) -> Result<Var<'_>> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push(value, requires_grad, op))
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.owns(loss)?;
        let value = loss.value();
        if value.numel() != 1 {
            return Err(Error::NotScalar(value.shape().to_vec()));
        }
        let seed = Tensor::full(value.shape().to_vec(), 1.0);
        self.backward_from(&[(loss, seed)])
    }

    /// Reverse pass seeded with explicit output cotangents.
    pub fn backward_from(&self, seeds: &[(Var<'_>, Tensor)]) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        for (var, seed) in seeds {
            self.owns(*var)?;
            let shape = nodes[var.id].value.shape();
            if seed.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "backward seed",
                    lhs: shape.to_vec(),
                    rhs: seed.shape().to_vec(),
                });
            }
            accumulate(&mut grads[var.id], seed.data());
        }

        for id in (0..nodes.len()).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out_shape = node.value.shape();
            let val = |i: usize| &nodes[i].value;
            let req = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if req(*a) {
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv.data()[p * n..(p + 1) * n];
                                da[i * k + p] = dot(grow, brow);
                            }
                        }
                        accumulate(&mut grads[*a], &da);
                    }
                    if req(*b) {
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let coef = av.data()[i * k + p];
                                if coef != 0.0 {
                                    axpy(coef, grow, &mut db[p * n..(p + 1) * n]);
                                }
                            }
                        }
                        accumulate(&mut grads[*b], &db);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if req(*a) {
                        let da = reduce_to(&g, out_shape, val(*a).shape());
                        accumulate(&mut grads[*a], &da);
                    }
                    if req(*b) {
                        let mut db = reduce_to(&g, out_shape, val(*b).shape());
                        if sign < 0.0 {
                            db.iter_mut().for_each(|x| *x = -*x);
                        }
                        accumulate(&mut grads[*b], &db);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if req(*a) {
                        let bb = expand(bv, out_shape);
                        let prod: Vec<f64> = g.iter().zip(&bb).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[*a], &reduce_to(&prod, out_shape, av.shape()));
                    }
                    if req(*b) {
                        let aa = expand(av, out_shape);
                        let prod: Vec<f64> = g.iter().zip(&aa).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[*b], &reduce_to(&prod, out_shape, bv.shape()));
                    }
                }
                Op::BroadcastTo(a) => {
                    let da = reduce_to(&g, out_shape, val(*a).shape());
                    accumulate(&mut grads[*a], &da);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[*a], &da);
                }
                Op::Log(a) => {
                    let x = val(*a).data();
                    let da: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                    accumulate(&mut grads[*a], &da);
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads[*a], &da);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads[*a], &da);
                }
                Op::Softplus(a) => {
                    let x = val(*a).data();
                    let da: Vec<f64> = g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect();
                    accumulate(&mut grads[*a], &da);
                }
                Op::Reciprocal(a) => {
                    let y = node.value.data();
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| -g * y * y).collect();
                    accumulate(&mut grads[*a], &da);
                }
                Op::Concat { inputs, axis } => {
                    let (outer, total, inner) = split_axis(out_shape, *axis);
                    let mut offset = 0;
                    for &inp in inputs {
                        let len = val(inp).shape()[*axis];
                        if req(inp) {
                            let mut di = Vec::with_capacity(outer * len * inner);
                            for o in 0..outer {
                                let base = (o * total + offset) * inner;
                                di.extend_from_slice(&g[base..base + len * inner]);
                            }
                            accumulate(&mut grads[inp], &di);
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let in_shape = val(*input).shape();
                    let (outer, total, inner) = split_axis(in_shape, *axis);
                    let len = out_shape[*axis];
                    let mut di = vec![0.0; outer * total * inner];
                    for o in 0..outer {
                        let dst = (o * total + start) * inner;
                        let src = o * len * inner;
                        di[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    accumulate(&mut grads[*input], &di);
                }
                Op::Transpose(a) => {
                    let (r, c) = (out_shape[0], out_shape[1]);
                    let da = transpose_data(&g, r, c);
                    accumulate(&mut grads[*a], &da);
                }
                Op::Flip { input, axis } => {
                    let da = flip_data(&g, out_shape, *axis);
                    accumulate(&mut grads[*input], &da);
                }
                Op::Sum { input, axis } | Op::Mean { input, axis } => {
                    let in_shape = val(*input).shape();
                    let is_mean = matches!(node.op, Op::Mean { .. });
                    let di = match axis {
                        None => {
                            let n = in_shape.iter().product::<usize>();
                            let v = if is_mean { g[0] / n as f64 } else { g[0] };
                            vec![v; n]
                        }
                        Some(ax) => {
                            let (outer, len, inner) = split_axis(in_shape, *ax);
                            let scale = if is_mean { 1.0 / len as f64 } else { 1.0 };
                            let mut di = vec![0.0; outer * len * inner];
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner {
                                        di[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                                    }
                                }
                            }
                            di
                        }
                    };
                    accumulate(&mut grads[*input], &di);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = *out_shape.last().unwrap();
                    let rows = g.len() / n;
                    let gam = val(*gamma).data();
                    if req(*gamma) || req(*beta) {
                        let mut dg = vec![0.0; n];
                        let mut db = vec![0.0; n];
                        for r in 0..rows {
                            for j in 0..n {
                                dg[j] += g[r * n + j] * xhat[r * n + j];
                                db[j] += g[r * n + j];
                            }
                        }
                        if req(*gamma) {
                            accumulate(&mut grads[*gamma], &dg);
                        }
                        if req(*beta) {
                            accumulate(&mut grads[*beta], &db);
                        }
                    }
                    if req(*x) {
                        let mut dx = vec![0.0; g.len()];
                        for r in 0..rows {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for j in 0..n {
                                let d = g[r * n + j] * gam[j];
                                mean_d += d;
                                mean_dx += d * xhat[r * n + j];
                            }
                            mean_d /= n as f64;
                            mean_dx /= n as f64;
                            for j in 0..n {
                                let d = g[r * n + j] * gam[j];
                                dx[r * n + j] =
                                    inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                            }
                        }
                        accumulate(&mut grads[*x], &dx);
                    }
                }
                Op::L2Normalize { input, eps, norms } => {
                    let n = *out_shape.last().unwrap();
                    let y = node.value.data();
                    let mut dx = vec![0.0; g.len()];
                    for (r, &norm) in norms.iter().enumerate() {
                        let row = r * n..(r + 1) * n;
                        if norm > *eps {
                            let yg = dot(&y[row.clone()], &g[row.clone()]);
                            for j in row {
                                dx[j] = (g[j] - y[j] * yg) / norm;
                            }
                        } else {
                            for j in row {
                                dx[j] = g[j] / eps;
                            }
                        }
                    }
                    accumulate(&mut grads[*input], &dx);
                }
                Op::Softmax { input, axis } => {
                    let y = node.value.data();
                    let (outer, len, inner) = split_axis(out_shape, *axis);
                    let mut dx = vec![0.0; g.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let s: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                            for l in 0..len {
                                dx[at(l)] = y[at(l)] * (g[at(l)] - s);
                            }
                        }
                    }
                    accumulate(&mut grads[*input], &dx);
                }
                Op::Custom { inputs, op } => {
                    let gt = Tensor::from_parts(out_shape.to_vec(), g);
                    let ins: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                    let dins = op.backward(&ins, &node.value, &gt);
                    for (&inp, d) in inputs.iter().zip(dins) {
                        if let (true, Some(d)) = (req(inp), d) {
                            debug_assert_eq!(d.shape(), val(inp).shape());
                            accumulate(&mut grads[inp], d.data());
                        }
                    }
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, name: &'static str, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<Self> {
        let v = self.value().map(f);
        self.tape
            .push_checked(name, v, self.requires_grad(), op(self.id))
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.tape.owns(other)?;
        let (a, b) = (self.value(), other.value());
        let data = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let shape = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
                op: name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })?;
            let ea = expand(&a, &shape);
            let eb = expand(&b, &shape);
            let data: Vec<f64> = ea.iter().zip(&eb).map(|(&x, &y)| f(x, y)).collect();
            let out = Tensor::from_parts(shape, data);
            let rg = self.requires_grad() || other.requires_grad();
            return self.tape.push_checked(name, out, rg, op(self.id, other.id));
        };
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push_checked(name, out, rg, op(self.id, other.id))
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op,
                axis,
                rank: shape.len(),
            });
        }
        Ok(shape)
    }

    /// 2-D matrix product `(m, k) · (k, n)`.
    pub fn matmul(self, other: Var<'t>) -> Result<Self> {
        self.tape.owns(other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let coef = a.data()[i * k + p];
                if coef != 0.0 {
                    axpy(coef, &b.data()[p * n..(p + 1) * n], orow);
                }
            }
        }
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push_checked(
            "matmul",
            Tensor::from_parts(vec![m, n], out),
            rg,
            Op::MatMul(self.id, other.id),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Self> {
        self.binary(other, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Self> {
        self.binary(other, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Self> {
        self.binary(other, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Self> {
        let v = self.value();
        match broadcast_shapes(v.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast_to",
                    lhs: v.shape().to_vec(),
                    rhs: shape.to_vec(),
                })
            }
        }
        let out = Tensor::from_parts(shape.to_vec(), expand(&v, shape));
        self.tape
            .push_checked("broadcast_to", out, self.requires_grad(), Op::BroadcastTo(self.id))
    }

    pub fn exp(self) -> Result<Self> {
        self.unary("exp", Op::Exp, f64::exp)
    }

    pub fn log(self) -> Result<Self> {
        self.unary("log", Op::Log, f64::ln)
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary("tanh", Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary("sigmoid", Op::Sigmoid, sigmoid)
    }

    /// `log(1 + exp(x))` in the overflow-safe form `max(x, 0) + log1p(exp(-|x|))`.
    pub fn softplus(self) -> Result<Self> {
        self.unary("softplus", Op::Softplus, softplus)
    }

    pub fn reciprocal(self) -> Result<Self> {
        self.unary("reciprocal", Op::Reciprocal, |x| 1.0 / x)
    }

    pub fn transpose(self) -> Result<Self> {
        let v = self.value();
        if v.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: v.shape().to_vec(),
                reason: "transpose needs a matrix".into(),
            });
        }
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let out = Tensor::from_parts(vec![c, r], transpose_data(v.data(), r, c));
        self.tape
            .push_checked("transpose", out, self.requires_grad(), Op::Transpose(self.id))
    }

    pub fn flip(self, axis: usize) -> Result<Self> {
        let shape = self.check_axis("flip", axis)?;
        let out = Tensor::from_parts(shape.clone(), flip_data(self.value().data(), &shape, axis));
        self.tape.push_checked(
            "flip",
            out,
            self.requires_grad(),
            Op::Flip {
                input: self.id,
                axis,
            },
        )
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self> {
        let shape = self.check_axis("slice", axis)?;
        if start >= end || end > shape[axis] {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("slice {start}..{end} along axis {axis}"),
            });
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let len = end - start;
        let v = self.value();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.tape.push_checked(
            "slice",
            Tensor::from_parts(out_shape, data),
            self.requires_grad(),
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
        )
    }

    pub fn sum(self) -> Result<Self> {
        self.reduce("sum", None, false)
    }

    pub fn mean(self) -> Result<Self> {
        self.reduce("mean", None, true)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        self.reduce("sum", Some(axis), false)
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self> {
        self.reduce("mean", Some(axis), true)
    }

    fn reduce(self, name: &'static str, axis: Option<usize>, mean: bool) -> Result<Self> {
        let v = self.value();
        let out = match axis {
            None => {
                let s: f64 = v.data().iter().sum();
                Tensor::scalar(if mean { s / v.numel() as f64 } else { s })
            }
            Some(ax) => {
                let shape = self.check_axis(name, ax)?;
                let (outer, len, inner) = split_axis(&shape, ax);
                let mut data = vec![0.0; outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let src = &v.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if mean {
                    data.iter_mut().for_each(|x| *x /= len as f64);
                }
                let mut out_shape = shape;
                out_shape.remove(ax);
                Tensor::from_parts(out_shape, data)
            }
        };
        let op = if mean {
            Op::Mean {
                input: self.id,
                axis,
            }
        } else {
            Op::Sum {
                input: self.id,
                axis,
            }
        };
        self.tape.push_checked(name, out, self.requires_grad(), op)
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gamma * xhat + beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Self> {
        self.tape.owns(gamma)?;
        self.tape.owns(beta)?;
        let x = self.value();
        let n = *x.shape().last().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "layer_norm on a scalar".into(),
        })?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = x.numel() / n;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        self.tape.push_checked(
            "layer_norm",
            Tensor::from_parts(x.shape().to_vec(), out),
            rg,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
        )
    }

    /// Scales each last-axis row to unit L2 norm (`x / max(|x|, eps)`).
    pub fn l2_normalize(self, eps: f64) -> Result<Self> {
        let x = self.value();
        let n = *x.shape().last().unwrap_or(&1);
        let rows = x.numel() / n;
        let mut norms = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data()[r * n..(r + 1) * n];
            let norm = dot(row, row).sqrt();
            norms[r] = norm;
            let denom = norm.max(eps);
            for j in 0..n {
                out[r * n + j] = row[j] / denom;
            }
        }
        self.tape.push_checked(
            "l2_normalize",
            Tensor::from_parts(x.shape().to_vec(), out),
            self.requires_grad(),
            Op::L2Normalize {
                input: self.id,
                eps,
                norms,
            },
        )
    }

    pub fn softmax(self, axis: usize) -> Result<Self> {
        let shape = self.check_axis("softmax", axis)?;
        let x = self.value();
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = vec![0.0; x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x.data()[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (x.data()[at(l)] - max).exp();
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] /= z;
                }
            }
        }
        self.tape.push_checked(
            "softmax",
            Tensor::from_parts(shape, out),
            self.requires_grad(),
            Op::Softmax {
                input: self.id,
                axis,
            },
        )
    }

    // Composites over the primitive set.

    pub fn scale(self, c: f64) -> Result<Self> {
        let c = self.tape.scalar(c);
        self.mul(c)
    }

    pub fn neg(self) -> Result<Self> {
        self.scale(-1.0)
    }

    pub fn square(self) -> Result<Self> {
        self.mul(self)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Result<Self> {
        self.mul(self.sigmoid()?)
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::InvalidShape {
        shape: vec![],
        reason: "concat of nothing".into(),
    })?;
    let tape = first.tape;
    let base = first.check_axis("concat", axis)?;
    let mut total = 0;
    let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
    for (p, v) in parts.iter().zip(&values) {
        tape.owns(*p)?;
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
        total += s[axis];
    }
    let (outer, _, inner) = split_axis(&base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis];
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let rg = parts.iter().any(|p| p.requires_grad());
    tape.push_checked(
        "concat",
        Tensor::from_parts(shape, data),
        rg,
        Op::Concat {
            inputs: parts.iter().map(|p| p.id).collect(),
            axis,
        },
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Materializes `t` broadcast to `shape`.
fn expand(t: &Tensor, shape: &[usize]) -> Vec<f64> {
    if t.shape() == shape {
        return t.to_vec();
    }
    let numel: usize = shape.iter().product();
    if t.numel() == 1 {
        return vec![t.data()[0]; numel];
    }
    // trailing-suffix broadcast: the source repeats verbatim
    let suffix = &shape[shape.len() - t.rank()..];
    if suffix == t.shape() {
        return t.data().iter().copied().cycle().take(numel).collect();
    }
    broadcast_source_indices(t.shape(), shape)
        .into_iter()
        .map(|i| t.data()[i])
        .collect()
}

/// Sums a gradient of `out_shape` down to `in_shape` over broadcast axes.
fn reduce_to(g: &[f64], out_shape: &[usize], in_shape: &[usize]) -> Vec<f64> {
    if out_shape == in_shape {
        return g.to_vec();
    }
    let n_in: usize = in_shape.iter().product();
    let mut out = vec![0.0; n_in];
    if n_in == 1 {
        out[0] = g.iter().sum();
        return out;
    }
    let suffix = &out_shape[out_shape.len() - in_shape.len()..];
    if suffix == in_shape {
        for chunk in g.chunks(n_in) {
            out.iter_mut().zip(chunk).for_each(|(o, c)| *o += c);
        }
        return out;
    }
    for (gi, src) in g
        .iter()
        .zip(broadcast_source_indices(in_shape, out_shape))
    {
        out[src] += gi;
    }
    out
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn flip_data(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for l in 0..len {
            let src = (o * len + l) * inner;
            let dst = (o * len + (len - 1 - l)) * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shape_algebra() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::ones([2, 3]));
        let b = tape.constant(&Tensor::ones([3, 1]));
        assert_eq!(a.matmul(b).unwrap().shape(), vec![2, 1]);
        let err = b.matmul(a).unwrap_err();
        assert!(err.to_string().contains("[3, 1]") && err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn flip_twice_is_identity() {
        let tape = Tape::new();
        let t = Tensor::new(vec![3, 2], (0..6).map(f64::from).collect()).unwrap();
        let x = tape.constant(&t);
        assert_eq!(x.flip(0).unwrap().flip(0).unwrap().value(), t);
        assert_ne!(x.flip(0).unwrap().value(), t);
    }

    #[test]
    fn concat_rows() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::ones([1, 4]));
        let b = tape.constant(&Tensor::zeros([1, 4]));
        let c = concat(&[a, b], 0).unwrap();
        assert_eq!(c.shape(), vec![2, 4]);
        assert_eq!(c.value().row(1), &[0.0; 4]);
        assert!(concat(&[a, tape.constant(&Tensor::ones([1, 3]))], 0).is_err());
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        // log1p(exp(-20)) evaluated independently
        let expected = (-20.0f64).exp().ln_1p();
        assert!((softplus(-20.0) - expected).abs() < 1e-22);
        assert!((softplus(-20.0) - 2.0612e-9).abs() < 1e-13);
        assert!(softplus(-800.0) > 0.0 || softplus(-800.0) == 0.0);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::new();
        let g = tape.constant(&Tensor::ones([3]));
        let b = tape.constant(&Tensor::zeros([3]));
        let c = tape.constant(&Tensor::full([3], 4.2));
        let y = c.layer_norm(g, b, 1e-5).unwrap().value();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));

        let x = tape.constant(&Tensor::vector(&[0.0, 1.0, 2.0]));
        let y = x.layer_norm(g, b, 1e-5).unwrap().value();
        // mean 1, variance 2/3
        let s = (2.0f64 / 3.0 + 1e-5).sqrt();
        for (got, want) in y.data().iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((y.data()[0] + 1.22474).abs() < 1e-4);

        let g2 = tape.constant(&Tensor::ones([2]));
        let b2 = tape.constant(&Tensor::zeros([2]));
        let x = tape.constant(&Tensor::vector(&[1.0, -1.0]));
        let y = x.layer_norm(g2, b2, 0.0).unwrap().value();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn square_and_tanh_gradients() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0));
        let y = x.square().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);

        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(0.0));
        let y = x.scale(2.0).unwrap().tanh().unwrap();
        let g = tape.backward(y).unwrap();
        assert!((g.wrt(x).item() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(1.0));
        let y = x.exp().unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::BackwardTwice)));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::ones([2, 2]));
        let unused = tape.param(&Tensor::ones([3]));
        let g = tape.backward(x.sum().unwrap()).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros([3]));
    }

    #[test]
    fn broadcast_gradient_has_leaf_shape() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::ones([4, 3]));
        let b = tape.param(&Tensor::vector(&[1.0, 2.0, 3.0]));
        let col = tape.param(&Tensor::ones([4, 1]));
        let y = x.add(b).unwrap().mul(col).unwrap().sum().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(b).shape(), &[3]);
        assert_eq!(g.wrt(b).data(), &[4.0, 4.0, 4.0]);
        assert_eq!(g.wrt(col).shape(), &[4, 1]);
        assert_eq!(g.wrt(col).data(), &[9.0; 4]);
    }

    #[test]
    fn non_finite_values_are_surfaced() {
        let tape = Tape::with_finite_checks(true);
        let x = tape.constant(&Tensor::scalar(0.0));
        assert!(matches!(x.log(), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn foreign_vars_are_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.constant(&Tensor::ones([2]));
        let b = t2.constant(&Tensor::ones([2]));
        assert!(matches!(a.add(b), Err(Error::ForeignVar)));
    }
}
