use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;

use super::kernels::{broadcast_map, broadcastable, col2im, down_size, im2col, pool_bin};
use super::{Param, ParamId, Scalar, Tensor};
use crate::error::{Error, Result};

type NodeId = usize;

thread_local! {
    static FAULT: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Perturbs the backward rule of the named op kind on the current thread
/// (scales its input gradients by 1.01). Used by the verification suite to
/// prove it can detect a broken rule; `None` restores correct behaviour.
#[doc(hidden)]
pub fn inject_backward_fault(op: Option<&'static str>) {
    FAULT.with(|f| f.set(op));
}

fn fault_scale<T: Scalar>(op: &'static str) -> T {
    if FAULT.with(|f| f.get()) == Some(op) {
        T::of(1.01)
    } else {
        T::one()
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Offset(NodeId),
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Transpose { a: NodeId, rows: usize, cols: usize },
    Outer(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Ln(NodeId),
    Abs(NodeId),
    Softmax { a: NodeId, cols: usize },
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize },
    Gather { a: NodeId, index: Vec<usize> },
    ConvDown { x: NodeId, w: NodeId, b: NodeId },
    ConvUp { x: NodeId, w: NodeId, b: NodeId },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, inv_std: Vec<T> },
    ChannelAffine { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<T>, inv_std: Vec<T> },
    Dropout { a: NodeId, mask: Vec<T> },
    AvgPool { a: NodeId, out_h: usize, out_w: usize },
    Interpolate { rows: NodeId, weights: NodeId, target: NodeId },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Outer(..) => "outer",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Ln(..) => "ln",
            Op::Abs(..) => "abs",
            Op::Softmax { .. } => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::ConvDown { .. } => "conv_down",
            Op::ConvUp { .. } => "conv_up",
            Op::BatchNorm { .. } => "batchnorm",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::Dropout { .. } => "dropout",
            Op::AvgPool { .. } => "avg_pool",
            Op::Interpolate { .. } => "interpolate",
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order of the
/// computation graph, so [`Tape::backward`] is a single reverse sweep.
/// Parameter values are copied onto the tape when registered; later optimizer
/// updates do not affect an existing tape.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward sweep: one entry per reached parameter
/// and per reached gradient-tracking leaf.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    params: HashMap<ParamId, Vec<T>>,
    leaves: HashMap<NodeId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Gradient with respect to a leaf created by [`Tape::var`] or
    /// [`Tape::param`]. Interior nodes are not retained.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.leaves.get(&var.id).map(Vec::as_slice)
    }
}

fn acc<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], id: NodeId, len: usize) -> &'g mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            param: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// A leaf that does not track gradients.
    pub fn constant(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// A gradient-tracking leaf, readable afterwards via [`Gradients::wrt`].
    pub fn var(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Snapshots a parameter onto the tape. Gradients flow back to it only if
    /// the parameter is trainable.
    pub fn param(&self, p: &Param<T>) -> Var<'_, T> {
        let v = self.push(
            p.tensor.shape().to_vec(),
            p.tensor.data().to_vec(),
            Op::Leaf,
            p.is_trainable(),
        );
        self.nodes.borrow_mut()[v.id].param = Some(p.id());
        v
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut out = Gradients::default();
        if !root.needs_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                if let Some(pid) = node.param {
                    match out.params.get_mut(&pid) {
                        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        None => {
                            out.params.insert(pid, g.clone());
                        }
                    }
                }
                out.leaves.insert(id, g);
                continue;
            }
            backward_rule(&nodes, node, &g, &mut grads);
        }
        Ok(out)
    }
}

fn backward_rule<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let k: T = fault_scale(node.op.name());
    let needs = |id: NodeId| nodes[id].needs_grad;
    let val = |id: NodeId| nodes[id].value.as_slice();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += k * gi);
            }
            if needs(*b) {
                let len = nodes[*b].value.len();
                let map = broadcast_map(&node.shape, &nodes[*b].shape);
                let db = acc(grads, *b, len);
                match map {
                    None => db.iter_mut().zip(g).for_each(|(d, &gi)| *d += sign * k * gi),
                    Some(map) => map.iter().zip(g).for_each(|(&j, &gi)| db[j] += sign * k * gi),
                }
            }
        }
        Op::Mul(a, b) => {
            let map = broadcast_map(&node.shape, &nodes[*b].shape);
            let (av, bv) = (val(*a), val(*b));
            let bj = |i: usize| map.as_ref().map_or(i, |m| m[i]);
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                for (i, d) in da.iter_mut().enumerate() {
                    *d += k * g[i] * bv[bj(i)];
                }
            }
            if needs(*b) {
                let db = acc(grads, *b, bv.len());
                for (i, &gi) in g.iter().enumerate() {
                    db[bj(i)] += k * gi * av[i];
                }
            }
        }
        Op::Scale(a, s) => {
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += k * *s * gi);
            }
        }
        Op::Offset(a) | Op::Reshape(a) => {
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += k * gi);
            }
        }
        Op::MatMul { a, b, m, k: inner, n } => {
            let (m, inner, n) = (*m, *inner, *n);
            if needs(*a) {
                let bv = val(*b);
                let da = acc(grads, *a, m * inner);
                T::gemm(m, n, inner, k, g, false, bv, true, T::one(), da);
            }
            if needs(*b) {
                let av = val(*a);
                let db = acc(grads, *b, inner * n);
                T::gemm(inner, m, n, k, av, true, g, false, T::one(), db);
            }
        }
        Op::Transpose { a, rows, cols } => {
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                for r in 0..*rows {
                    for c in 0..*cols {
                        da[r * cols + c] += k * g[c * rows + r];
                    }
                }
            }
        }
        Op::Outer(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = bv.len();
            if needs(*a) {
                let da = acc(grads, *a, av.len());
                for (i, d) in da.iter_mut().enumerate() {
                    *d += k * g[i * n..(i + 1) * n].iter().zip(bv).map(|(&x, &y)| x * y).sum::<T>();
                }
            }
            if needs(*b) {
                let db = acc(grads, *b, n);
                for (i, &ai) in av.iter().enumerate() {
                    for (j, d) in db.iter_mut().enumerate() {
                        *d += k * g[i * n + j] * ai;
                    }
                }
            }
        }
        Op::Tanh(a) | Op::Sigmoid(a) => {
            if needs(*a) {
                let y = &node.value;
                let tanh = matches!(node.op, Op::Tanh(_));
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    let local = if tanh { T::one() - y[i] * y[i] } else { y[i] * (T::one() - y[i]) };
                    da[i] += k * g[i] * local;
                }
            }
        }
        Op::Relu(a) | Op::LeakyRelu(a, _) => {
            if needs(*a) {
                let slope = match node.op {
                    Op::LeakyRelu(_, s) => s,
                    _ => T::zero(),
                };
                let x = val(*a);
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += k * g[i] * if x[i] > T::zero() { T::one() } else { slope };
                }
            }
        }
        Op::Ln(a) => {
            if needs(*a) {
                let x = val(*a);
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += k * g[i] / x[i];
                }
            }
        }
        Op::Abs(a) => {
            if needs(*a) {
                let x = val(*a);
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    let s = if x[i] > T::zero() {
                        T::one()
                    } else if x[i] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    da[i] += k * g[i] * s;
                }
            }
        }
        Op::Softmax { a, cols } => {
            if needs(*a) {
                let y = &node.value;
                let da = acc(grads, *a, g.len());
                for (row, (yr, gr)) in y.chunks(*cols).zip(g.chunks(*cols)).enumerate() {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..*cols {
                        da[row * cols + j] += k * yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            if needs(*a) {
                let len = nodes[*a].value.len();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    T::one() / T::of(len as f64)
                } else {
                    T::one()
                };
                let da = acc(grads, *a, len);
                da.iter_mut().for_each(|d| *d += k * g[0] * scale);
            }
        }
        Op::Concat { parts, axis } => {
            let outer: usize = node.shape[..*axis].iter().product();
            let inner: usize = node.shape[axis + 1..].iter().product();
            let total = node.shape[*axis] * inner;
            let mut offset = 0;
            for &p in parts {
                let width = nodes[p].shape[*axis] * inner;
                if needs(p) {
                    let dp = acc(grads, p, outer * width);
                    for o in 0..outer {
                        let src = &g[o * total + offset..][..width];
                        dp[o * width..(o + 1) * width]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &s)| *d += k * s);
                    }
                }
                offset += width;
            }
        }
        Op::Slice { a, axis, start } => {
            if needs(*a) {
                let src_shape = &nodes[*a].shape;
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let total = src_shape[*axis] * inner;
                let width = node.shape[*axis] * inner;
                let da = acc(grads, *a, outer * total);
                for o in 0..outer {
                    da[o * total + start * inner..][..width]
                        .iter_mut()
                        .zip(&g[o * width..(o + 1) * width])
                        .for_each(|(d, &s)| *d += k * s);
                }
            }
        }
        Op::Gather { a, index } => {
            if needs(*a) {
                let da = acc(grads, *a, nodes[*a].value.len());
                for (&src, &gi) in index.iter().zip(g) {
                    da[src] += k * gi;
                }
            }
        }
        Op::ConvDown { x, w, b } => conv_down_backward(nodes, node, g, k, *x, *w, *b, grads),
        Op::ConvUp { x, w, b } => conv_up_backward(nodes, node, g, k, *x, *w, *b, grads),
        Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
            let (n, c, hw) = nchw(&node.shape);
            let m = T::of((n * hw) as f64);
            let gam = val(*gamma);
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        sum_g[ch] += g[i];
                        sum_gx[ch] += g[i] * xhat[i];
                    }
                }
            }
            if needs(*gamma) {
                let dg = acc(grads, *gamma, c);
                dg.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += k * s);
            }
            if needs(*beta) {
                let db = acc(grads, *beta, c);
                db.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += k * s);
            }
            if needs(*x) {
                let dx = acc(grads, *x, g.len());
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let scale = gam[ch] * inv_std[ch] / m;
                        for i in base..base + hw {
                            dx[i] += k * scale * (m * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                        }
                    }
                }
            }
        }
        Op::ChannelAffine { x, gamma, beta, mean, inv_std } => {
            let (n, c, hw) = nchw(&node.shape);
            let xv = val(*x);
            let gam = val(*gamma);
            if needs(*gamma) || needs(*beta) {
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * (xv[i] - mean[ch]) * inv_std[ch];
                        }
                    }
                }
                if needs(*gamma) {
                    let dg = acc(grads, *gamma, c);
                    dg.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += k * s);
                }
                if needs(*beta) {
                    let db = acc(grads, *beta, c);
                    db.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += k * s);
                }
            }
            if needs(*x) {
                let dx = acc(grads, *x, g.len());
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let scale = gam[ch] * inv_std[ch];
                        for i in base..base + hw {
                            dx[i] += k * g[i] * scale;
                        }
                    }
                }
            }
        }
        Op::Dropout { a, mask } => {
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += k * g[i] * mask[i];
                }
            }
        }
        Op::Interpolate { rows, weights, target } => {
            let (mv, av, tv) = (val(*rows), val(*weights), val(*target));
            let width = tv.len();
            if needs(*rows) {
                let dm = acc(grads, *rows, mv.len());
                for (idx, d) in dm.iter_mut().enumerate() {
                    *d += k * g[idx] * (T::one() - av[idx / width]);
                }
            }
            if needs(*weights) {
                let da = acc(grads, *weights, av.len());
                for (idx, &gi) in g.iter().enumerate() {
                    da[idx / width] += k * gi * (tv[idx % width] - mv[idx]);
                }
            }
            if needs(*target) {
                let dt = acc(grads, *target, width);
                for (idx, &gi) in g.iter().enumerate() {
                    dt[idx % width] += k * gi * av[idx / width];
                }
            }
        }
        Op::AvgPool { a, out_h, out_w } => {
            if needs(*a) {
                let src = &nodes[*a].shape;
                let (n, c, h, w) = (src[0], src[1], src[2], src[3]);
                let da = acc(grads, *a, n * c * h * w);
                for plane in 0..n * c {
                    for oy in 0..*out_h {
                        let (y0, y1) = pool_bin(oy, *out_h, h);
                        for ox in 0..*out_w {
                            let (x0, x1) = pool_bin(ox, *out_w, w);
                            let gi = g[(plane * out_h + oy) * out_w + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                            for y in y0..y1 {
                                for x in x0..x1 {
                                    da[(plane * h + y) * w + x] += k * gi;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn nchw(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

#[allow(clippy::too_many_arguments)]
fn conv_down_backward<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &[T],
    k: T,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    grads: &mut [Option<Vec<T>>],
) {
    let xs = &nodes[x].shape;
    let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let co = node.shape[1];
    let plane = node.shape[2] * node.shape[3];
    let rows = ci * 16;
    let xv = &nodes[x].value;
    let wv = &nodes[w].value;
    let mut cols = vec![T::zero(); rows * plane];
    for item in 0..n {
        let gi = &g[item * co * plane..(item + 1) * co * plane];
        if nodes[w].needs_grad {
            im2col(&xv[item * ci * h * wd..(item + 1) * ci * h * wd], ci, h, wd, &mut cols);
            let dw = acc(grads, w, co * rows);
            T::gemm(co, plane, rows, k, gi, false, &cols, true, T::one(), dw);
        }
        if nodes[b].needs_grad {
            let db = acc(grads, b, co);
            for (c, d) in db.iter_mut().enumerate() {
                *d += k * gi[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
            }
        }
        if nodes[x].needs_grad {
            T::gemm(rows, co, plane, T::one(), wv, true, gi, false, T::zero(), &mut cols);
            let dx = acc(grads, x, n * ci * h * wd);
            let dst = &mut dx[item * ci * h * wd..(item + 1) * ci * h * wd];
            if k == T::one() {
                col2im(&cols, ci, h, wd, dst);
            } else {
                cols.iter_mut().for_each(|v| *v *= k);
                col2im(&cols, ci, h, wd, dst);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_up_backward<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &[T],
    k: T,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    grads: &mut [Option<Vec<T>>],
) {
    let xs = &nodes[x].shape;
    let (n, ci, hin, win) = (xs[0], xs[1], xs[2], xs[3]);
    let co = node.shape[1];
    let (ho, wo) = (node.shape[2], node.shape[3]);
    let plane_in = hin * win;
    let rows = co * 16;
    let xv = &nodes[x].value;
    let wv = &nodes[w].value;
    let mut cols = vec![T::zero(); rows * plane_in];
    for item in 0..n {
        let gi = &g[item * co * ho * wo..(item + 1) * co * ho * wo];
        if nodes[b].needs_grad {
            let db = acc(grads, b, co);
            for (c, d) in db.iter_mut().enumerate() {
                *d += k * gi[c * ho * wo..(c + 1) * ho * wo].iter().copied().sum::<T>();
            }
        }
        if !nodes[w].needs_grad && !nodes[x].needs_grad {
            continue;
        }
        im2col(gi, co, ho, wo, &mut cols);
        let xi = &xv[item * ci * plane_in..(item + 1) * ci * plane_in];
        if nodes[w].needs_grad {
            let dw = acc(grads, w, ci * rows);
            T::gemm(ci, plane_in, rows, k, xi, false, &cols, true, T::one(), dw);
        }
        if nodes[x].needs_grad {
            let dx = acc(grads, x, n * ci * plane_in);
            let dst = &mut dx[item * ci * plane_in..(item + 1) * ci * plane_in];
            T::gemm(ci, rows, plane_in, k, wv, false, &cols, false, T::one(), dst);
        }
    }
}

/// Forward operations. Binary element-wise ops broadcast their right operand
/// over dimensions where it has extent 1 (ranks must match).
impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Tensor<T> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::from_vec(&n.shape, n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    /// Runs `f` on the raw value buffer without copying it.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// First element; intended for scalar losses.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    /// A new constant leaf holding this value; gradients stop here.
    pub fn detach(self) -> Var<'t, T> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].shape.clone(), nodes[self.id].value.clone())
        };
        self.tape.push(shape, value, Op::Leaf, false)
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&v| f(v)).collect())
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(shape, value, op, needs)
    }

    fn binary(self, other: Var<'t, T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var<'t, T>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if !broadcastable(&a.shape, &b.shape) {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
            let value: Vec<T> = match broadcast_map(&a.shape, &b.shape) {
                None => a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect(),
                Some(map) => a.value.iter().zip(&map).map(|(&x, &j)| f(x, b.value[j])).collect(),
            };
            (a.shape.clone(), value)
        };
        let op = match name {
            "add" => Op::Add(self.id, other.id),
            "sub" => Op::Sub(self.id, other.id),
            _ => Op::Mul(self.id, other.id),
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(shape, value, op, needs))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |a, b| a * b)
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        self.unary(Op::Scale(self.id, s), |v| v * s)
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(Op::Offset(self.id), |v| v + c)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (m, k, n, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::shape("matmul", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, T::one(), &a.value, false, &b.value, false, T::zero(), &mut c);
            (m, k, n, c)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            vec![m, n],
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            needs,
        ))
    }

    /// Transpose of a rank-2 value.
    pub fn t(self) -> Result<Var<'t, T>> {
        let (rows, cols, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 2 {
                return Err(Error::shape("transpose", &a.shape, &[]));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = a.value[i * c + j];
                }
            }
            (r, c, out)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(vec![cols, rows], value, Op::Transpose { a: self.id, rows, cols }, needs))
    }

    /// Outer product of two rank-1 values: `out[i][j] = a[i] * b[j]`.
    pub fn outer(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 1 || b.shape.len() != 1 {
                return Err(Error::shape("outer", &a.shape, &b.shape));
            }
            let value: Vec<T> = a
                .value
                .iter()
                .flat_map(|&x| b.value.iter().map(move |&y| x * y))
                .collect();
            (vec![a.value.len(), b.value.len()], value)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(shape, value, Op::Outer(self.id, other.id), needs))
    }

    /// Row-wise convex interpolation `out[i][j] = (1 - w[i]) * self[i][j] + w[i] * target[j]`
    /// for `self: [rows, width]`, `weights` with `rows` entries and `target`
    /// with `width` entries. Each output is clamped into the closed interval
    /// spanned by its two endpoints, which only ever absorbs rounding when
    /// `w[i]` lies in `[0, 1]`; the backward rule is that of the unclamped
    /// expression.
    pub fn interpolate_rows(self, weights: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (m, w, t) = (&nodes[self.id], &nodes[weights.id], &nodes[target.id]);
            if m.shape.len() != 2 || w.value.len() != m.shape[0] {
                return Err(Error::shape("interpolate_rows weights", &m.shape, &w.shape));
            }
            if t.value.len() != m.shape[1] {
                return Err(Error::shape("interpolate_rows target", &m.shape, &t.shape));
            }
            let width = m.shape[1];
            let value: Vec<T> = m
                .value
                .iter()
                .enumerate()
                .map(|(idx, &old)| {
                    let (a, new) = (w.value[idx / width], t.value[idx % width]);
                    let v = (T::one() - a) * old + a * new;
                    v.max(old.min(new)).min(old.max(new))
                })
                .collect();
            (m.shape.clone(), value)
        };
        let needs = self.tape.needs(&[self.id, weights.id, target.id]);
        let op = Op::Interpolate { rows: self.id, weights: weights.id, target: target.id };
        Ok(self.tape.push(shape, value, op, needs))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(Op::Tanh(self.id), |v| v.tanh())
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(Op::Relu(self.id), |v| v.max(T::zero()))
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        self.unary(Op::LeakyRelu(self.id, slope), |v| if v > T::zero() { v } else { v * slope })
    }

    /// Natural logarithm.
    pub fn ln(self) -> Var<'t, T> {
        self.unary(Op::Ln(self.id), |v| v.ln())
    }

    pub fn abs(self) -> Var<'t, T> {
        self.unary(Op::Abs(self.id), |v| v.abs())
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let (shape, cols, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("softmax input is not finite".into()));
            }
            let cols = *a.shape.last().expect("tensors have rank >= 1");
            let mut out = a.value.clone();
            for row in out.chunks_mut(cols) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                row.iter_mut().for_each(|v| *v = (*v - max).exp());
                let total: T = row.iter().copied().sum();
                row.iter_mut().for_each(|v| *v /= total);
            }
            (a.shape.clone(), cols, out)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(shape, value, Op::Softmax { a: self.id, cols }, needs))
    }

    pub fn sum(self) -> Var<'t, T> {
        let total: T = self.with_data(|d| d.iter().copied().sum());
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(vec![1], vec![total], Op::Sum(self.id), needs)
    }

    pub fn mean(self) -> Var<'t, T> {
        let mean: T = self.with_data(|d| d.iter().copied().sum::<T>() / T::of(d.len() as f64));
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(vec![1], vec![mean], Op::Mean(self.id), needs)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if shape.iter().product::<usize>() != a.value.len() || shape.contains(&0) {
                return Err(Error::shape("reshape", &a.shape, shape));
            }
            a.value.clone()
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(shape.to_vec(), value, Op::Reshape(self.id), needs))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let tape = first.tape;
        let (shape, value) = {
            let nodes = tape.nodes.borrow();
            let base = &nodes[first.id].shape;
            if axis >= base.len() {
                return Err(Error::shape("concat", base, &[axis]));
            }
            let mut shape = base.clone();
            shape[axis] = 0;
            for p in parts {
                let s = &nodes[p.id].shape;
                let ok = s.len() == base.len()
                    && s.iter().zip(base).enumerate().all(|(d, (x, y))| d == axis || x == y);
                if !ok {
                    return Err(Error::shape("concat", base, s));
                }
                shape[axis] += s[axis];
            }
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let mut value = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for p in parts {
                    let n = &nodes[p.id];
                    let width = n.shape[axis] * inner;
                    value.extend_from_slice(&n.value[o * width..(o + 1) * width]);
                }
            }
            (shape, value)
        };
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let needs = tape.needs(&ids);
        Ok(tape.push(shape, value, Op::Concat { parts: ids, axis }, needs))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if axis >= a.shape.len() || len == 0 || start + len > a.shape[axis] {
                return Err(Error::shape("slice", &a.shape, &[axis, start, len]));
            }
            let outer: usize = a.shape[..axis].iter().product();
            let inner: usize = a.shape[axis + 1..].iter().product();
            let total = a.shape[axis] * inner;
            let mut value = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                value.extend_from_slice(&a.value[o * total + start * inner..][..len * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            (shape, value)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(shape, value, Op::Slice { a: self.id, axis, start }, needs))
    }

    /// `out[i] = self.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(self, index: Vec<usize>, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if shape.iter().product::<usize>() != index.len() || index.iter().any(|&i| i >= a.value.len()) {
                return Err(Error::shape("gather", &a.shape, shape));
            }
            index.iter().map(|&i| a.value[i]).collect()
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(shape.to_vec(), value, Op::Gather { a: self.id, index }, needs))
    }

    /// Stride-2, padding-1, 4x4 convolution. `self` is `[N, Ci, H, W]` with
    /// even `H, W >= 2`; `weight` is `[Co, Ci, 4, 4]`, `bias` is `[Co]`.
    pub fn conv_down(self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let (shape, value) = {
            let nodes = tape.nodes.borrow();
            let (x, w, b) = (&nodes[self.id], &nodes[weight.id], &nodes[bias.id]);
            let xs = &x.shape;
            if xs.len() != 4 || w.shape.len() != 4 || w.shape[1] != xs[1] || w.shape[2..] != [4, 4] {
                return Err(Error::shape("conv_down", xs, &w.shape));
            }
            if xs[2] < 2 || xs[3] < 2 || xs[2] % 2 != 0 || xs[3] % 2 != 0 {
                return Err(Error::shape("conv_down (spatial dims must be even)", xs, &w.shape));
            }
            let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
            let co = w.shape[0];
            if b.shape != [co] {
                return Err(Error::shape("conv_down bias", &b.shape, &[co]));
            }
            let (ho, wo) = (down_size(h), down_size(wd));
            let plane = ho * wo;
            let rows = ci * 16;
            let mut cols = vec![T::zero(); rows * plane];
            let mut out = vec![T::zero(); n * co * plane];
            for item in 0..n {
                im2col(&x.value[item * ci * h * wd..(item + 1) * ci * h * wd], ci, h, wd, &mut cols);
                let dst = &mut out[item * co * plane..(item + 1) * co * plane];
                for (c, chunk) in dst.chunks_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = b.value[c]);
                }
                T::gemm(co, rows, plane, T::one(), &w.value, false, &cols, false, T::one(), dst);
            }
            (vec![n, co, ho, wo], out)
        };
        let needs = tape.needs(&[self.id, weight.id, bias.id]);
        Ok(tape.push(
            shape,
            value,
            Op::ConvDown {
                x: self.id,
                w: weight.id,
                b: bias.id,
            },
            needs,
        ))
    }

    /// Transposed convolution doubling `H, W`: the exact adjoint of
    /// [`conv_down`](Self::conv_down) sharing the same weight tensor.
    /// `weight` is `[Ci, Co, 4, 4]`, i.e. laid out as the down-convolution
    /// from `Co` to `Ci` channels; `bias` is `[Co]`.
    pub fn conv_up(self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let (shape, value) = {
            let nodes = tape.nodes.borrow();
            let (x, w, b) = (&nodes[self.id], &nodes[weight.id], &nodes[bias.id]);
            let xs = &x.shape;
            if xs.len() != 4 || w.shape.len() != 4 || w.shape[0] != xs[1] || w.shape[2..] != [4, 4] {
                return Err(Error::shape("conv_up", xs, &w.shape));
            }
            let (n, ci, hin, win) = (xs[0], xs[1], xs[2], xs[3]);
            let co = w.shape[1];
            if b.shape != [co] {
                return Err(Error::shape("conv_up bias", &b.shape, &[co]));
            }
            let (ho, wo) = (2 * hin, 2 * win);
            let plane_in = hin * win;
            let rows = co * 16;
            let mut cols = vec![T::zero(); rows * plane_in];
            let mut out = vec![T::zero(); n * co * ho * wo];
            for item in 0..n {
                let xi = &x.value[item * ci * plane_in..(item + 1) * ci * plane_in];
                T::gemm(rows, ci, plane_in, T::one(), &w.value, true, xi, false, T::zero(), &mut cols);
                let dst = &mut out[item * co * ho * wo..(item + 1) * co * ho * wo];
                for (c, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = b.value[c]);
                }
                col2im(&cols, co, ho, wo, dst);
            }
            (vec![n, co, ho, wo], out)
        };
        let needs = tape.needs(&[self.id, weight.id, bias.id]);
        Ok(tape.push(
            shape,
            value,
            Op::ConvUp {
                x: self.id,
                w: weight.id,
                b: bias.id,
            },
            needs,
        ))
    }

    /// Batch normalization with batch statistics over `(N, H, W)`.
    /// Returns the output and the per-channel batch mean and biased variance.
    pub fn batch_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<(Var<'t, T>, Vec<T>, Vec<T>)> {
        let tape = self.tape;
        let (shape, value, mean, var, xhat, inv_std) = {
            let nodes = tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() < 2 {
                return Err(Error::shape("batch_norm", &x.shape, &nodes[gamma.id].shape));
            }
            let (n, c, hw) = nchw(&x.shape);
            if nodes[gamma.id].shape != [c] || nodes[beta.id].shape != [c] {
                return Err(Error::shape("batch_norm", &x.shape, &nodes[gamma.id].shape));
            }
            let m = T::of((n * hw) as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    mean[ch] += x.value[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for b in 0..n {
                for ch in 0..c {
                    var[ch] += x.value[(b * c + ch) * hw..][..hw]
                        .iter()
                        .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                        .sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let (gam, bet) = (&nodes[gamma.id].value, &nodes[beta.id].value);
            let mut xhat = vec![T::zero(); x.value.len()];
            let mut out = vec![T::zero(); x.value.len()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        xhat[i] = (x.value[i] - mean[ch]) * inv_std[ch];
                        out[i] = gam[ch] * xhat[i] + bet[ch];
                    }
                }
            }
            (x.shape.clone(), out, mean, var, xhat, inv_std)
        };
        let needs = tape.needs(&[self.id, gamma.id, beta.id]);
        let y = tape.push(
            shape,
            value,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            needs,
        );
        Ok((y, mean, var))
    }

    /// `(x - mean) * inv_std * gamma + beta` per channel with fixed
    /// statistics (batch norm in evaluation mode).
    pub fn channel_affine(self, gamma: Var<'t, T>, beta: Var<'t, T>, mean: &[T], inv_std: &[T]) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let (shape, value) = {
            let nodes = tape.nodes.borrow();
            let x = &nodes[self.id];
            let (n, c, hw) = nchw(&x.shape);
            if nodes[gamma.id].shape != [c] || mean.len() != c || inv_std.len() != c {
                return Err(Error::shape("channel_affine", &x.shape, &nodes[gamma.id].shape));
            }
            let (gam, bet) = (&nodes[gamma.id].value, &nodes[beta.id].value);
            let mut out = vec![T::zero(); x.value.len()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        out[i] = (x.value[i] - mean[ch]) * inv_std[ch] * gam[ch] + bet[ch];
                    }
                }
            }
            (x.shape.clone(), out)
        };
        let needs = tape.needs(&[self.id, gamma.id, beta.id]);
        Ok(tape.push(
            shape,
            value,
            Op::ChannelAffine {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                mean: mean.to_vec(),
                inv_std: inv_std.to_vec(),
            },
            needs,
        ))
    }

    /// Multiplies by a fixed mask (dropout with survivors pre-scaled).
    pub fn mask(self, mask: Vec<T>) -> Result<Var<'t, T>> {
        if mask.len() != self.numel() {
            return Err(Error::shape("mask", &self.shape(), &[mask.len()]));
        }
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.value.iter().zip(&mask).map(|(&v, &m)| v * m).collect())
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(shape, value, Op::Dropout { a: self.id, mask }, needs))
    }

    /// Adaptive average pooling of `[N, C, H, W]` to `[N, C, out_h, out_w]`.
    pub fn adaptive_avg_pool(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 4 || a.shape[2] < out_h || a.shape[3] < out_w || out_h == 0 || out_w == 0 {
                return Err(Error::shape("adaptive_avg_pool", &a.shape, &[out_h, out_w]));
            }
            let (n, c, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
            let mut out = vec![T::zero(); n * c * out_h * out_w];
            for plane in 0..n * c {
                for oy in 0..out_h {
                    let (y0, y1) = pool_bin(oy, out_h, h);
                    for ox in 0..out_w {
                        let (x0, x1) = pool_bin(ox, out_w, w);
                        let mut s = T::zero();
                        for y in y0..y1 {
                            for x in x0..x1 {
                                s += a.value[(plane * h + y) * w + x];
                            }
                        }
                        out[(plane * out_h + oy) * out_w + ox] = s / T::of(((y1 - y0) * (x1 - x0)) as f64);
                    }
                }
            }
            (vec![n, c, out_h, out_w], out)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(shape, value, Op::AvgPool { a: self.id, out_h, out_w }, needs))
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
