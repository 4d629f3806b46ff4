//! Define-by-run tape over dense `f64` arrays.
//!
//! Every operation on a [`Var`] appends a node holding its forward value and
//! the indices of its inputs. [`Tape::backward`] replays the nodes in reverse
//! and returns a [`Gradients`] map. Nodes are only ever appended, so an input
//! index is always smaller than the index of the node consuming it.
//!
//! Kinks (`abs`, `relu`, `clamp`, `maximum`, reductions) use the subgradient
//! convention "derivative 0 at the kink" except where one branch is chosen
//! deterministically (ties in `maximum`/`minimum` go to the left operand).

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use super::params::{ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Vector-Jacobian product for an operation defined outside the tape.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Given the upstream gradient of the output, return one gradient per input
    /// (`None` when the op does not propagate into that input).
    fn backward(
        &self,
        grad_out: &[f64],
        inputs: &[&[f64]],
        output: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Unary {
    Exp,
    Log,
    Sigmoid,
    Sin,
    Cos,
    Sqrt,
    Tanh,
    Relu,
    Softplus(f64),
    Abs,
    Square,
    Recip,
}

/// Which operand of a binary op is a broadcast scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

enum Op {
    Leaf,
    Const,
    Binary(Binary, usize, usize, Bcast),
    Unary(Unary, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Clamp(usize, f64, f64),
    MatMul(usize, usize),
    Sum(usize),
    ArgReduce(usize, usize),
    SumCols(usize),
    SumRows(usize),
    SumGroups(usize, usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    Gather(usize, Rc<Vec<usize>>),
    Custom(Vec<usize>, Box<dyn CustomOp>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: Vec<(usize, ParamId)>,
}

/// The recording tape. Built fresh for every optimizer step and dropped after it.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`]; carries the node's shape implicitly.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, shape={:?})", self.id, self.shape())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], 1),
        2 => (shape[0], shape[1]),
        _ => panic!("expected rank <= 2, got {shape:?}"),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len(), "value length vs shape");
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    /// Differentiable input.
    pub fn var(&self, shape: &[usize], value: Vec<f64>) -> Var<'_> {
        assert_eq!(numel(shape), value.len(), "var: value length does not match shape");
        self.push(shape.to_vec(), value, Op::Leaf, true)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.var(&[1], vec![value])
    }

    /// Constant input; gradients never flow into it.
    pub fn constant(&self, shape: &[usize], value: Vec<f64>) -> Var<'_> {
        assert_eq!(numel(shape), value.len(), "constant: value length does not match shape");
        self.push(shape.to_vec(), value, Op::Const, false)
    }

    pub fn constant_scalar(&self, value: f64) -> Var<'_> {
        self.constant(&[1], vec![value])
    }

    /// Records a parameter from `store` as a differentiable leaf.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        let v = self.push(p.shape.clone(), p.values.clone(), Op::Leaf, true);
        self.inner.borrow_mut().params.push((v.id, id));
        v
    }

    /// Records a custom op whose backward is supplied by `op`.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        shape: &[usize],
        value: Vec<f64>,
        op: Box<dyn CustomOp>,
    ) -> Var<'t> {
        assert_eq!(numel(shape), value.len(), "custom op {}: output length", op.name());
        let needs = inputs.iter().any(|v| v.needs_grad());
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(shape.to_vec(), value, Op::Custom(ids, op), needs)
    }

    fn node_shape(&self, id: usize) -> Vec<usize> {
        self.inner.borrow().nodes[id].shape.clone()
    }

    /// Borrow the forward value of `v`.
    pub fn value(&self, v: Var<'_>) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.nodes[v.id].value.as_slice())
    }

    /// Reverse sweep from a scalar `root`. The seed gradient is 1.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let root_shape = &nodes[root.id].shape;
        if numel(root_shape) != 1 {
            return Err(Error::NonScalarRoot(root_shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut params = ParamGrads::default();
        for &(node, pid) in &inner.params {
            if let Some(g) = &grads[node] {
                params.accumulate(pid, g);
            }
        }
        Ok(Gradients { grads, params })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

fn unary_deriv(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Sin => x.cos(),
        Unary::Cos => -x.sin(),
        Unary::Sqrt => {
            if y > 0.0 {
                0.5 / y
            } else {
                0.0
            }
        }
        Unary::Tanh => 1.0 - y * y,
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Softplus(beta) => sigmoid(beta * x),
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Square => 2.0 * x,
        Unary::Recip => -y * y,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    if z > 30.0 {
        x
    } else {
        z.exp().ln_1p() / beta
    }
}

fn unary_eval(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Sin => x.sin(),
        Unary::Cos => x.cos(),
        Unary::Sqrt => x.sqrt(),
        Unary::Tanh => x.tanh(),
        Unary::Relu => x.max(0.0),
        Unary::Softplus(beta) => softplus(x, beta),
        Unary::Abs => x.abs(),
        Unary::Square => x * x,
        Unary::Recip => 1.0 / x,
    }
}

fn binary_eval(kind: Binary, a: f64, b: f64) -> f64 {
    match kind {
        Binary::Add => a + b,
        Binary::Sub => a - b,
        Binary::Mul => a * b,
        Binary::Div => a / b,
        Binary::Max => {
            if a >= b {
                a
            } else {
                b
            }
        }
        Binary::Min => {
            if a <= b {
                a
            } else {
                b
            }
        }
    }
}

/// Partial derivatives (d/da, d/db) of a binary op.
fn binary_deriv(kind: Binary, a: f64, b: f64) -> (f64, f64) {
    match kind {
        Binary::Add => (1.0, 1.0),
        Binary::Sub => (1.0, -1.0),
        Binary::Mul => (b, a),
        Binary::Div => (1.0 / b, -a / (b * b)),
        Binary::Max => {
            if a >= b {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
        Binary::Min => {
            if a <= b {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
    }
}

/// `C[m,n] = A[m,k] * B[k,n]` with arbitrary strides, row-major storage.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: pointer/stride combinations describe in-bounds row-major views of
    // the provided slices; sizes are asserted by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf | Op::Const => {}
        Op::Binary(kind, a, b, bc) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let n = g.len();
            let need_a = nodes[*a].needs_grad;
            let need_b = nodes[*b].needs_grad;
            let mut ga = need_a.then(|| vec![0.0; av.len()]);
            let mut gb = need_b.then(|| vec![0.0; bv.len()]);
            for i in 0..n {
                let (ia, ib) = match bc {
                    Bcast::None => (i, i),
                    Bcast::Lhs => (0, i),
                    Bcast::Rhs => (i, 0),
                };
                let (da, db) = binary_deriv(*kind, av[ia], bv[ib]);
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += g[i] * da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += g[i] * db;
                }
            }
            if let Some(ga) = ga {
                add_into(grads, nodes, *a, ga);
            }
            if let Some(gb) = gb {
                add_into(grads, nodes, *b, gb);
            }
        }
        Op::Unary(kind, a) => {
            let x = &nodes[*a].value;
            let y = &node.value;
            let ga = (0..g.len())
                .map(|i| g[i] * unary_deriv(*kind, x[i], y[i]))
                .collect();
            add_into(grads, nodes, *a, ga);
        }
        Op::Scale(a, c) => add_into(grads, nodes, *a, g.iter().map(|v| v * c).collect()),
        Op::AddScalar(a) => add_into(grads, nodes, *a, g.to_vec()),
        Op::Clamp(a, lo, hi) => {
            let x = &nodes[*a].value;
            let ga = g
                .iter()
                .zip(x)
                .map(|(gi, xi)| if *xi > *lo && *xi < *hi { *gi } else { 0.0 })
                .collect();
            add_into(grads, nodes, *a, ga);
        }
        Op::MatMul(a, b) => {
            let (m, k) = rows_cols(&nodes[*a].shape);
            let (_, n) = rows_cols(&nodes[*b].shape);
            if nodes[*a].needs_grad {
                // dA = G[m,n] * B^T[n,k]
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, n as isize, 1, &nodes[*b].value, 1, n as isize, &mut ga);
                add_into(grads, nodes, *a, ga);
            }
            if nodes[*b].needs_grad {
                // dB = A^T[k,m] * G[m,n]
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, &nodes[*a].value, 1, k as isize, g, n as isize, 1, &mut gb);
                add_into(grads, nodes, *b, gb);
            }
        }
        Op::Sum(a) => {
            let len = nodes[*a].value.len();
            add_into(grads, nodes, *a, vec![g[0]; len]);
        }
        Op::ArgReduce(a, idx) => {
            let len = nodes[*a].value.len();
            let mut ga = vec![0.0; len];
            ga[*idx] = g[0];
            add_into(grads, nodes, *a, ga);
        }
        Op::SumCols(a) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                ga[i * c..(i + 1) * c].iter_mut().for_each(|x| *x = g[i]);
            }
            add_into(grads, nodes, *a, ga);
        }
        Op::SumRows(a) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                ga[i * c..(i + 1) * c].copy_from_slice(g);
            }
            add_into(grads, nodes, *a, ga);
        }
        Op::SumGroups(a, group) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                let o = i / group;
                ga[i * c..(i + 1) * c].copy_from_slice(&g[o * c..(o + 1) * c]);
            }
            add_into(grads, nodes, *a, ga);
        }
        Op::BroadcastRows(a) => {
            let c = nodes[*a].value.len();
            let mut ga = vec![0.0; c];
            for row in g.chunks_exact(c) {
                ga.iter_mut().zip(row).for_each(|(x, y)| *x += y);
            }
            add_into(grads, nodes, *a, ga);
        }
        Op::BroadcastCols(a) => {
            let r = nodes[*a].value.len();
            let c = g.len() / r;
            let ga = g.chunks_exact(c).map(|row| row.iter().sum()).collect();
            add_into(grads, nodes, *a, ga);
        }
        Op::SliceCols(a, start) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            let len = node.shape[1];
            accumulate_if(grads, nodes, *a, r * c, |ga| {
                for i in 0..r {
                    for j in 0..len {
                        ga[i * c + start + j] += g[i * len + j];
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let r = node.shape[0];
            let total = node.shape[1];
            let mut off = 0;
            for &p in parts {
                let (_, c) = rows_cols(&nodes[p].shape);
                if nodes[p].needs_grad {
                    let mut gp = vec![0.0; r * c];
                    for i in 0..r {
                        gp[i * c..(i + 1) * c]
                            .copy_from_slice(&g[i * total + off..i * total + off + c]);
                    }
                    add_into(grads, nodes, p, gp);
                }
                off += c;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                if nodes[p].needs_grad {
                    add_into(grads, nodes, p, g[off..off + len].to_vec());
                }
                off += len;
            }
        }
        Op::Reshape(a) => add_into(grads, nodes, *a, g.to_vec()),
        Op::Gather(a, idx) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            accumulate_if(grads, nodes, *a, r * c, |ga| {
                for (o, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[src * c + j] += g[o * c + j];
                    }
                }
            });
        }
        Op::Custom(inputs, op) => {
            let vals: Vec<&[f64]> = inputs.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let out = op.backward(g, &vals, &node.value);
            assert_eq!(out.len(), inputs.len(), "custom op {} returned wrong arity", op.name());
            for (&i, gi) in inputs.iter().zip(out) {
                if let Some(gi) = gi {
                    assert_eq!(gi.len(), nodes[i].value.len(), "custom op {} gradient length", op.name());
                    add_into(grads, nodes, i, gi);
                }
            }
        }
    }
}

fn accumulate_if(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
    len: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if nodes[id].needs_grad {
        accumulate(&mut grads[id], len, f);
    }
}

/// Gradient of the root with respect to a queried node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrad {
    pub values: Vec<f64>,
    /// The node was not reached by the backward sweep (constant, detached or
    /// unused); `values` is all zeros.
    pub detached: bool,
}

/// Result of [`Tape::backward`]: gradients keyed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: ParamGrads,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled and flagged when `v` was not reached.
    pub fn wrt(&self, v: Var<'_>) -> NodeGrad {
        match self.get(v) {
            Some(g) => NodeGrad {
                values: g.to_vec(),
                detached: false,
            },
            None => NodeGrad {
                values: vec![0.0; v.len()],
                detached: true,
            },
        }
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.node_shape(self.id)
    }

    pub fn len(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        rows_cols(&self.shape()).0
    }

    pub fn cols(&self) -> usize {
        rows_cols(&self.shape()).1
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].needs_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Vec<f64> {
        self.tape.value(*self).to_vec()
    }

    /// Forward value of a single-element array.
    pub fn item(&self) -> f64 {
        let v = self.tape.value(*self);
        assert_eq!(v.len(), 1, "item() on non-scalar");
        v[0]
    }

    /// Constant copy cut from the graph.
    pub fn detach(self) -> Var<'t> {
        let shape = self.shape();
        let value = self.value();
        self.tape.constant(&shape, value)
    }

    fn unary(self, kind: Unary) -> Var<'t> {
        let (shape, value, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (
                n.shape.clone(),
                n.value.iter().map(|&x| unary_eval(kind, x)).collect(),
                n.needs_grad,
            )
        };
        self.tape.push(shape, value, Op::Unary(kind, self.id), needs)
    }

    fn binary(self, other: Var<'t>, kind: Binary) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let (shape, value, bc, needs) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[other.id];
            let needs = a.needs_grad || b.needs_grad;
            let vec_like = |s: &[usize]| s.len() <= 1 || (s.len() == 2 && s[1] == 1);
            if a.value.len() == b.value.len()
                && (a.shape == b.shape || (vec_like(&a.shape) && vec_like(&b.shape)))
            {
                let v = a
                    .value
                    .iter()
                    .zip(&b.value)
                    .map(|(&x, &y)| binary_eval(kind, x, y))
                    .collect();
                (a.shape.clone(), v, Bcast::None, needs)
            } else if b.value.len() == 1 {
                let y = b.value[0];
                let v = a.value.iter().map(|&x| binary_eval(kind, x, y)).collect();
                (a.shape.clone(), v, Bcast::Rhs, needs)
            } else if a.value.len() == 1 {
                let x = a.value[0];
                let v = b.value.iter().map(|&y| binary_eval(kind, x, y)).collect();
                (b.shape.clone(), v, Bcast::Lhs, needs)
            } else {
                panic!(
                    "{kind:?}: incompatible shapes {:?} and {:?} (use broadcast_rows/broadcast_cols)",
                    a.shape, b.shape
                );
            }
        };
        self.tape
            .push(shape, value, Op::Binary(kind, self.id, other.id, bc), needs)
    }

    pub fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Binary::Add)
    }
    pub fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Binary::Sub)
    }
    pub fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Binary::Mul)
    }
    pub fn div(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Binary::Div)
    }
    /// Elementwise maximum; ties pass the gradient to `self`.
    pub fn maximum(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Binary::Max)
    }
    /// Elementwise minimum; ties pass the gradient to `self`.
    pub fn minimum(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, Binary::Min)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Var<'t> {
        self.unary(Unary::Log)
    }
    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }
    pub fn sin(self) -> Var<'t> {
        self.unary(Unary::Sin)
    }
    pub fn cos(self) -> Var<'t> {
        self.unary(Unary::Cos)
    }
    pub fn sqrt(self) -> Var<'t> {
        self.unary(Unary::Sqrt)
    }
    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }
    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu)
    }
    /// `ln(1 + exp(beta x)) / beta`
    pub fn softplus(self, beta: f64) -> Var<'t> {
        self.unary(Unary::Softplus(beta))
    }
    pub fn abs(self) -> Var<'t> {
        self.unary(Unary::Abs)
    }
    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square)
    }
    pub fn recip(self) -> Var<'t> {
        self.unary(Unary::Recip)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let (shape, value, needs) = self.map_value(|x| x * c);
        self.tape.push(shape, value, Op::Scale(self.id, c), needs)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let (shape, value, needs) = self.map_value(|x| x + c);
        self.tape.push(shape, value, Op::AddScalar(self.id), needs)
    }

    /// `1 - x`
    pub fn one_minus(self) -> Var<'t> {
        self.scale(-1.0).add_scalar(1.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the open interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let (shape, value, needs) = self.map_value(|x| x.clamp(lo, hi));
        self.tape.push(shape, value, Op::Clamp(self.id, lo, hi), needs)
    }

    fn map_value(&self, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>, bool) {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.id];
        (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect(), n.needs_grad)
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(self, o: Var<'t>) -> Var<'t> {
        let (value, m, n, needs) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[o.id];
            let (m, k) = rows_cols(&a.shape);
            let (k2, n) = rows_cols(&b.shape);
            assert_eq!(k, k2, "matmul: inner dimensions {:?} x {:?}", a.shape, b.shape);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a.value, k as isize, 1, &b.value, n as isize, 1, &mut c);
            (c, m, n, a.needs_grad || b.needs_grad)
        };
        self.tape.push(vec![m, n], value, Op::MatMul(self.id, o.id), needs)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t> {
        let (s, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.value.iter().sum::<f64>(), n.needs_grad)
        };
        self.tape.push(vec![1], vec![s], Op::Sum(self.id), needs)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    fn arg_reduce(self, pick_max: bool) -> Var<'t> {
        let (idx, v, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            assert!(!n.value.is_empty(), "reduce on empty array");
            let mut best = 0;
            for (i, &x) in n.value.iter().enumerate() {
                let better = if pick_max { x > n.value[best] } else { x < n.value[best] };
                if better {
                    best = i;
                }
            }
            (best, n.value[best], n.needs_grad)
        };
        self.tape
            .push(vec![1], vec![v], Op::ArgReduce(self.id, idx), needs)
    }

    /// Maximum element (first occurrence receives the gradient).
    pub fn max_reduce(self) -> Var<'t> {
        self.arg_reduce(true)
    }

    /// Minimum element (first occurrence receives the gradient).
    pub fn min_reduce(self) -> Var<'t> {
        self.arg_reduce(false)
    }

    /// `[r,c] -> [r]`: sum across each row.
    pub fn sum_cols(self) -> Var<'t> {
        let (value, r, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let (r, c) = rows_cols(&n.shape);
            let v = n.value.chunks_exact(c.max(1)).map(|x| x.iter().sum()).collect();
            (v, r, n.needs_grad)
        };
        self.tape.push(vec![r], value, Op::SumCols(self.id), needs)
    }

    /// `[r,c] -> [c]`: sum down each column.
    pub fn sum_rows(self) -> Var<'t> {
        let (value, c, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let (_, c) = rows_cols(&n.shape);
            let mut v = vec![0.0; c];
            for row in n.value.chunks_exact(c) {
                v.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            (v, c, n.needs_grad)
        };
        self.tape.push(vec![c], value, Op::SumRows(self.id), needs)
    }

    /// `[r*group, c] -> [r, c]`: sums consecutive blocks of `group` rows.
    pub fn sum_groups(self, group: usize) -> Var<'t> {
        let (value, shape, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let (r, c) = rows_cols(&n.shape);
            assert!(group > 0 && r % group == 0, "sum_groups: {r} rows not divisible by {group}");
            let out_r = r / group;
            let mut v = vec![0.0; out_r * c];
            for i in 0..r {
                let o = i / group;
                for j in 0..c {
                    v[o * c + j] += n.value[i * c + j];
                }
            }
            let shape = if n.shape.len() == 2 { vec![out_r, c] } else { vec![out_r] };
            (v, shape, n.needs_grad)
        };
        self.tape.push(shape, value, Op::SumGroups(self.id, group), needs)
    }

    /// `[c] -> [rows, c]`
    pub fn broadcast_rows(self, rows: usize) -> Var<'t> {
        let (value, c, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let mut v = Vec::with_capacity(rows * n.value.len());
            for _ in 0..rows {
                v.extend_from_slice(&n.value);
            }
            (v, n.value.len(), n.needs_grad)
        };
        self.tape.push(vec![rows, c], value, Op::BroadcastRows(self.id), needs)
    }

    /// `[r] -> [r, cols]`
    pub fn broadcast_cols(self, cols: usize) -> Var<'t> {
        let (value, r, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let v = n
                .value
                .iter()
                .flat_map(|&x| std::iter::repeat(x).take(cols))
                .collect();
            (v, n.value.len(), n.needs_grad)
        };
        self.tape.push(vec![r, cols], value, Op::BroadcastCols(self.id), needs)
    }

    /// Columns `start..start+len` of a `[r,c]` array, as `[r,len]`.
    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let (value, r, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let (r, c) = rows_cols(&n.shape);
            assert!(start + len <= c, "slice_cols {start}+{len} > {c}");
            let mut v = Vec::with_capacity(r * len);
            for row in n.value.chunks_exact(c) {
                v.extend_from_slice(&row[start..start + len]);
            }
            (v, r, n.needs_grad)
        };
        self.tape
            .push(vec![r, len], value, Op::SliceCols(self.id, start), needs)
    }

    /// Single column `j` as a `[r]` vector.
    pub fn col(self, j: usize) -> Var<'t> {
        let r = self.rows();
        self.slice_cols(j, 1).reshape(&[r])
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let (value, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            assert_eq!(numel(shape), n.value.len(), "reshape {:?} -> {shape:?}", n.shape);
            (n.value.clone(), n.needs_grad)
        };
        self.tape.push(shape.to_vec(), value, Op::Reshape(self.id), needs)
    }

    /// Rows of `self` selected by `idx` (repeats allowed): `[r,c] -> [idx.len(), c]`.
    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Var<'t> {
        let (value, shape, needs) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let (r, c) = rows_cols(&n.shape);
            let mut v = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                assert!(i < r, "gather index {i} out of range {r}");
                v.extend_from_slice(&n.value[i * c..(i + 1) * c]);
            }
            let shape = if n.shape.len() == 2 { vec![idx.len(), c] } else { vec![idx.len()] };
            (v, shape, n.needs_grad)
        };
        self.tape.push(shape, value, Op::Gather(self.id, idx), needs)
    }
}

/// Concatenate `[r, c_i]` arrays along columns. Rank-1 inputs count as one column.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    let tape = parts[0].tape;
    let (value, r, total, needs) = {
        let inner = tape.inner.borrow();
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| rows_cols(&inner.nodes[p.id].shape))
            .collect();
        let r = dims[0].0;
        assert!(dims.iter().all(|d| d.0 == r), "concat_cols: row counts differ {dims:?}");
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut v = vec![0.0; r * total];
        let mut off = 0;
        for (p, &(_, c)) in parts.iter().zip(&dims) {
            let src = &inner.nodes[p.id].value;
            for i in 0..r {
                v[i * total + off..i * total + off + c].copy_from_slice(&src[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let needs = parts.iter().any(|p| inner.nodes[p.id].needs_grad);
        (v, r, total, needs)
    };
    tape.push(
        vec![r, total],
        value,
        Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        needs,
    )
}

/// Stack `[r_i, c]` arrays along rows. Rank-1 inputs stay rank 1.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    let tape = parts[0].tape;
    let (value, shape, needs) = {
        let inner = tape.inner.borrow();
        let first = &inner.nodes[parts[0].id].shape;
        let rank1 = first.len() <= 1;
        let c = rows_cols(first).1;
        let mut rows = 0;
        let mut v = Vec::new();
        for p in parts {
            let n = &inner.nodes[p.id];
            let (r, pc) = rows_cols(&n.shape);
            assert!(pc == c && (n.shape.len() <= 1) == rank1, "concat_rows: shapes differ");
            rows += r;
            v.extend_from_slice(&n.value);
        }
        let needs = parts.iter().any(|p| inner.nodes[p.id].needs_grad);
        (v, if rank1 { vec![rows] } else { vec![rows, c] }, needs)
    };
    tape.push(shape, value, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), needs)
}

macro_rules! impl_op {
    ($tr:ident, $m:ident, $f:ident) => {
        impl<'t> std::ops::$tr for Var<'t> {
            type Output = Var<'t>;
            fn $m(self, o: Var<'t>) -> Var<'t> {
                Var::$f(self, o)
            }
        }
        impl<'t> std::ops::$tr<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $m(self, o: f64) -> Var<'t> {
                let c = self.tape.constant_scalar(o);
                Var::$f(self, c)
            }
        }
    };
}

impl_op!(Add, add, add);
impl_op!(Sub, sub, sub);
impl_op!(Mul, mul, mul);
impl_op!(Div, div, div);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(f: impl for<'a> Fn(Var<'a>) -> Var<'a>, x: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let v = tape.var(&[x.len()], x.to_vec());
        let y = f(v);
        tape.backward(y).unwrap().wrt(v).values
    }

    #[test]
    fn square_derivative() {
        assert_eq!(grad_of(|x| x.square().sum(), &[3.0]), vec![6.0]);
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.scalar(2.0);
        let y = tape.scalar(5.0);
        let g = tape.backward(x * y).unwrap();
        assert_eq!(g.wrt(x).values, vec![5.0]);
        assert_eq!(g.wrt(y).values, vec![2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(grad_of(|x| x.sigmoid().sum(), &[0.0]), vec![0.25]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.var(&[2], vec![1.0, 2.0]);
        assert!(matches!(tape.backward(x.exp()), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn detached_node_is_flagged() {
        let tape = Tape::new();
        let x = tape.var(&[2], vec![1.0, 2.0]);
        let unused = tape.var(&[3], vec![0.0; 3]);
        let c = x.detach();
        let y = (x * c).sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).values, vec![1.0, 2.0]);
        let gu = g.wrt(unused);
        assert!(gu.detached);
        assert_eq!(gu.values, vec![0.0; 3]);
        assert!(g.wrt(c).detached);
    }

    #[test]
    fn matmul_gradients() {
        let tape = Tape::new();
        let a = tape.var(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = tape.var(&[3, 1], vec![1.0, -1.0, 2.0]);
        let c = a.matmul(b);
        assert_eq!(c.value(), vec![5.0, 11.0]);
        let g = tape.backward(c.sum()).unwrap();
        assert_eq!(g.wrt(a).values, vec![1.0, -1.0, 2.0, 1.0, -1.0, 2.0]);
        assert_eq!(g.wrt(b).values, vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let tape = Tape::new();
        let x = tape.var(&[3], vec![1.0, 2.0, 3.0]);
        let s = tape.scalar(2.0);
        let y = (s.div(x)).sum() + (x * s).sum();
        let g = tape.backward(y).unwrap();
        let gs = g.wrt(s).values[0];
        assert!((gs - (1.0 + 0.5 + 1.0 / 3.0 + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_ops_route_gradients() {
        let tape = Tape::new();
        let x = tape.var(&[2, 3], (0..6).map(f64::from).collect());
        let parts = concat_cols(&[x.slice_cols(2, 1), x.slice_cols(0, 2)]);
        assert_eq!(parts.value(), vec![2.0, 0.0, 1.0, 5.0, 3.0, 4.0]);
        let w = tape.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = (parts * w).sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).values, vec![2.0, 3.0, 1.0, 5.0, 6.0, 4.0]);
    }

    #[test]
    fn concat_rows_splits_gradient() {
        let tape = Tape::new();
        let a = tape.var(&[1, 2], vec![1.0, 2.0]);
        let b = tape.var(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = concat_rows(&[a, b]);
        assert_eq!(c.shape(), vec![3, 2]);
        let y = (c.square()).sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(a).values, vec![2.0, 4.0]);
        assert_eq!(g.wrt(b).values, vec![6.0, 8.0, 10.0, 12.0]);
    }
}
