use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};

use super::{gemm, numel, Layout, Tensor};

static DISCONNECTED_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Bmm { a: usize, b: usize, trans_b: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Sum(usize),
    Mean(usize),
    SumAxis { a: usize, axis: usize },
    Permute { a: usize, perm: Vec<usize> },
    Reshape(usize),
    Repeat { a: usize, axis: usize },
    GatherRows { a: usize, idx: Rc<[usize]> },
    ScatterAddRows { a: usize, idx: Rc<[usize]> },
    Pick { a: usize, idx: Rc<[usize]> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    live_bytes: Cell<usize>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// A differentiable input.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes held by all recorded values.
    pub fn bytes(&self) -> usize {
        self.live_bytes.get()
    }

    fn push(&self, t: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        self.live_bytes.set(self.live_bytes.get() + t.bytes());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn record(&self, t: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let needs = parents.iter().any(|&p| self.needs(p));
        self.push(t, op, needs)
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every
    /// differentiable leaf it depends on.
    ///
    /// # Panics
    /// If `loss` has more than one element or belongs to another tape.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(loss.tape, self), "loss from another tape");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));
        let mut leaves = HashMap::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut acc = |pid: usize, t: Tensor| {
                if !nodes[pid].needs_grad {
                    return;
                }
                match &mut grads[pid] {
                    Some(existing) => existing
                        .data
                        .iter_mut()
                        .zip(&t.data)
                        .for_each(|(e, x)| *e += x),
                    slot @ None => *slot = Some(t),
                }
            };
            let val = |pid: usize| -> &Tensor { &nodes[pid].value };
            match &node.op {
                Op::Leaf => {
                    if node.needs_grad {
                        leaves.insert(id, g);
                    }
                }
                &Op::MatMul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                    if nodes[a].needs_grad {
                        let mut da = Tensor::zeros(&[m, k]);
                        gemm(m, n, k, &g.data, Layout::Normal, &bv.data, Layout::Transposed, &mut da.data, 0.0);
                        acc(a, da);
                    }
                    if nodes[b].needs_grad {
                        let mut db = Tensor::zeros(&[k, n]);
                        gemm(k, m, n, &av.data, Layout::Transposed, &g.data, Layout::Normal, &mut db.data, 0.0);
                        acc(b, db);
                    }
                }
                &Op::Bmm { a, b, trans_b } => {
                    let (av, bv) = (val(a), val(b));
                    let (batch, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
                    let n = if trans_b { bv.shape[1] } else { bv.shape[2] };
                    if nodes[a].needs_grad {
                        let mut da = Tensor::zeros(&av.shape);
                        for z in 0..batch {
                            let gs = &g.data[z * m * n..(z + 1) * m * n];
                            let bs = &bv.data[z * k * n..(z + 1) * k * n];
                            let out = &mut da.data[z * m * k..(z + 1) * m * k];
                            let lb = if trans_b { Layout::Normal } else { Layout::Transposed };
                            gemm(m, n, k, gs, Layout::Normal, bs, lb, out, 0.0);
                        }
                        acc(a, da);
                    }
                    if nodes[b].needs_grad {
                        let mut db = Tensor::zeros(&bv.shape);
                        for z in 0..batch {
                            let gs = &g.data[z * m * n..(z + 1) * m * n];
                            let as_ = &av.data[z * m * k..(z + 1) * m * k];
                            let out = &mut db.data[z * k * n..(z + 1) * k * n];
                            if trans_b {
                                // dB (n×k) = Gᵀ A
                                gemm(n, m, k, gs, Layout::Transposed, as_, Layout::Normal, out, 0.0);
                            } else {
                                gemm(k, m, n, as_, Layout::Transposed, gs, Layout::Normal, out, 0.0);
                            }
                        }
                        acc(b, db);
                    }
                }
                &Op::Add(a, b) => {
                    if nodes[a].needs_grad {
                        acc(a, g.clone());
                    }
                    acc(b, g);
                }
                &Op::Sub(a, b) => {
                    if nodes[a].needs_grad {
                        acc(a, g.clone());
                    }
                    acc(b, g.map(|x| -x));
                }
                &Op::Mul(a, b) => {
                    if nodes[a].needs_grad {
                        acc(a, zip(&g, val(b), |x, y| x * y));
                    }
                    if nodes[b].needs_grad {
                        acc(b, zip(&g, val(a), |x, y| x * y));
                    }
                }
                &Op::AddBias(a, b) => {
                    if nodes[b].needs_grad {
                        let n = val(b).numel();
                        let mut db = Tensor::zeros(val(b).shape());
                        for row in g.data.chunks(n) {
                            db.data.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                        }
                        acc(b, db);
                    }
                    acc(a, g);
                }
                &Op::Scale(a, c) => acc(a, g.map(|x| x * c)),
                &Op::ScaleBy(a, s) => {
                    let sv = val(s).data[0];
                    if nodes[s].needs_grad {
                        let ds: f64 = g.data.iter().zip(&val(a).data).map(|(x, y)| x * y).sum();
                        acc(s, Tensor::full(val(s).shape(), ds));
                    }
                    acc(a, g.map(|x| x * sv));
                }
                &Op::Relu(a) => {
                    let y = &node.value;
                    acc(a, zip(&g, y, |x, yv| if yv > 0.0 { x } else { 0.0 }));
                }
                &Op::Softmax(a) => {
                    let y = &node.value;
                    let n = *y.shape.last().unwrap_or(&1);
                    let mut dx = Tensor::zeros(&y.shape);
                    for ((dr, gr), yr) in dx.data.chunks_mut(n).zip(g.data.chunks(n)).zip(y.data.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    acc(a, dx);
                }
                &Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let n = *y.shape.last().unwrap_or(&1);
                    let mut dx = Tensor::zeros(&y.shape);
                    for ((dr, gr), yr) in dx.data.chunks_mut(n).zip(g.data.chunks(n)).zip(y.data.chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = gv - yv.exp() * total;
                        }
                    }
                    acc(a, dx);
                }
                Op::Concat { parts, axis } => {
                    let shape = &node.value.shape;
                    let outer = numel(&shape[..*axis]);
                    let inner = numel(&shape[axis + 1..]);
                    let total = shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let width = val(p).shape[*axis] * inner;
                        if nodes[p].needs_grad {
                            let mut dp = Vec::with_capacity(outer * width);
                            for o in 0..outer {
                                let start = o * total + offset;
                                dp.extend_from_slice(&g.data[start..start + width]);
                            }
                            acc(p, Tensor { shape: val(p).shape.clone(), data: dp });
                        }
                        offset += width;
                    }
                }
                &Op::Sum(a) => {
                    let gv = g.data[0];
                    acc(a, Tensor::full(val(a).shape(), gv));
                }
                &Op::Mean(a) => {
                    let n = val(a).numel().max(1) as f64;
                    let gv = g.data[0] / n;
                    acc(a, Tensor::full(val(a).shape(), gv));
                }
                &Op::SumAxis { a, axis } => {
                    let shape = &val(a).shape;
                    let outer = numel(&shape[..axis]);
                    let d = shape[axis];
                    let inner = numel(&shape[axis + 1..]);
                    let mut dx = Vec::with_capacity(outer * d * inner);
                    for o in 0..outer {
                        for _ in 0..d {
                            dx.extend_from_slice(&g.data[o * inner..(o + 1) * inner]);
                        }
                    }
                    acc(a, Tensor { shape: shape.clone(), data: dx });
                }
                Op::Permute { a, perm } => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    acc(*a, g.permuted(&inv));
                }
                &Op::Reshape(a) => {
                    let shape = val(a).shape.clone();
                    acc(a, Tensor { shape, data: g.data });
                }
                &Op::Repeat { a, axis } => {
                    let shape = &node.value.shape;
                    let outer = numel(&shape[..axis]);
                    let count = shape[axis];
                    let inner = numel(&shape[axis + 1..]);
                    let mut dx = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for c in 0..count {
                            let src = &g.data[(o * count + c) * inner..(o * count + c + 1) * inner];
                            dx[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(d, x)| *d += x);
                        }
                    }
                    acc(a, Tensor { shape: val(a).shape.clone(), data: dx });
                }
                Op::GatherRows { a, idx } => {
                    let src = val(*a);
                    let w = row_width(src);
                    let mut dx = Tensor::zeros(src.shape());
                    for (r, &i) in idx.iter().enumerate() {
                        dx.data[i * w..(i + 1) * w]
                            .iter_mut()
                            .zip(&g.data[r * w..(r + 1) * w])
                            .for_each(|(d, x)| *d += x);
                    }
                    acc(*a, dx);
                }
                Op::ScatterAddRows { a, idx } => {
                    let src = val(*a);
                    let w = row_width(src);
                    let mut dx = Vec::with_capacity(src.numel());
                    for &i in idx.iter() {
                        dx.extend_from_slice(&g.data[i * w..(i + 1) * w]);
                    }
                    acc(*a, Tensor { shape: src.shape.clone(), data: dx });
                }
                Op::Pick { a, idx } => {
                    let src = val(*a);
                    let w = row_width(src);
                    let mut dx = Tensor::zeros(src.shape());
                    for (r, &c) in idx.iter().enumerate() {
                        dx.data[r * w + c] += g.data[r];
                    }
                    acc(*a, dx);
                }
            }
        }
        Gradients { leaves }
    }
}

fn row_width(t: &Tensor) -> usize {
    numel(&t.shape[1..])
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape, b.shape, "{op}: shape mismatch");
}

/// Gradients of the differentiable leaves reached by a backward pass.
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.leaves.get(&v.id)
    }

    /// Gradient of `v`, or zeros (with a one-time warning) if the loss does
    /// not depend on it.
    pub fn wrt(&mut self, v: Var<'_>) -> Tensor {
        match self.leaves.remove(&v.id) {
            Some(t) => t,
            None => {
                if !DISCONNECTED_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!("parameter does not influence the loss; using a zero gradient");
                }
                Tensor::zeros(v.shape().as_slice())
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    fn unary(&self, t: Tensor, op: Op) -> Var<'t> {
        self.tape.record(t, op, &[self.id])
    }

    fn binary(&self, other: Var<'t>, t: Tensor, op: Op) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        self.tape.record(t, op, &[self.id, other.id])
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let out = self
            .value()
            .matmul(&other.value())
            .unwrap_or_else(|e| panic!("{e}"));
        self.binary(other, out, Op::MatMul(self.id, other.id))
    }

    /// Batched product of [B,m,k] and [B,k,n].
    pub fn bmm(&self, other: Var<'t>) -> Var<'t> {
        self.bmm_impl(other, false)
    }

    /// Batched product of [B,m,k] and the transpose of [B,n,k].
    pub fn bmm_nt(&self, other: Var<'t>) -> Var<'t> {
        self.bmm_impl(other, true)
    }

    fn bmm_impl(&self, other: Var<'t>, trans_b: bool) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert!(a.shape.len() == 3 && b.shape.len() == 3, "bmm needs rank-3 operands");
        let (batch, m, k) = (a.shape[0], a.shape[1], a.shape[2]);
        let (kb, n) = if trans_b {
            (b.shape[2], b.shape[1])
        } else {
            (b.shape[1], b.shape[2])
        };
        assert!(b.shape[0] == batch && kb == k, "bmm: shape mismatch {:?} {:?}", a.shape, b.shape);
        let mut out = Tensor::zeros(&[batch, m, n]);
        let lb = if trans_b { Layout::Transposed } else { Layout::Normal };
        for z in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data[z * m * k..(z + 1) * m * k],
                Layout::Normal,
                &b.data[z * k * n..(z + 1) * k * n],
                lb,
                &mut out.data[z * m * n..(z + 1) * m * n],
                0.0,
            );
        }
        self.binary(other, out, Op::Bmm { a: self.id, b: other.id, trans_b })
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b);
        self.binary(other, zip(&a, &b, |x, y| x + y), Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b);
        self.binary(other, zip(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b);
        self.binary(other, zip(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id))
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&self, bias: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), bias.value());
        let n = b.numel();
        assert_eq!(a.shape.last().copied(), Some(n), "add_bias: {:?} + {:?}", a.shape, b.shape);
        let mut out = (*a).clone();
        for row in out.data.chunks_mut(n) {
            row.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
        self.binary(bias, out, Op::AddBias(self.id, bias.id))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let out = self.value().map(|x| x * c);
        self.unary(out, Op::Scale(self.id, c))
    }

    /// Multiplies by a one-element variable.
    pub fn scale_by(&self, s: Var<'t>) -> Var<'t> {
        let sv = s.value();
        assert_eq!(sv.numel(), 1, "scale_by needs a scalar");
        let c = sv.data[0];
        let out = self.value().map(|x| x * c);
        self.binary(s, out, Op::ScaleBy(self.id, s.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let out = self.value().map(|x| x.max(0.0));
        self.unary(out, Op::Relu(self.id))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<'t> {
        let a = self.value();
        let n = *a.shape.last().unwrap_or(&1);
        let mut out = (*a).clone();
        for row in out.data.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.unary(out, Op::Softmax(self.id))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Var<'t> {
        let a = self.value();
        let n = *a.shape.last().unwrap_or(&1);
        let mut out = (*a).clone();
        for row in out.data.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.unary(out, Op::LogSoftmax(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data.iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let a = self.value();
        let s = a.data.iter().sum::<f64>() / a.numel().max(1) as f64;
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&self, axis: usize) -> Var<'t> {
        let a = self.value();
        let outer = numel(&a.shape[..axis]);
        let d = a.shape[axis];
        let inner = numel(&a.shape[axis + 1..]);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..d {
                let src = &a.data[(o * d + k) * inner..(o * d + k + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(x, y)| *x += y);
            }
        }
        let mut shape = a.shape.clone();
        shape.remove(axis);
        self.unary(Tensor { shape, data: out }, Op::SumAxis { a: self.id, axis })
    }

    /// Inserts a new axis at `axis` holding `count` copies.
    pub fn repeat(&self, axis: usize, count: usize) -> Var<'t> {
        let a = self.value();
        let outer = numel(&a.shape[..axis]);
        let inner = numel(&a.shape[axis..]);
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            for _ in 0..count {
                out.extend_from_slice(&a.data[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = a.shape.clone();
        shape.insert(axis, count);
        self.unary(Tensor { shape, data: out }, Op::Repeat { a: self.id, axis })
    }

    pub fn permute(&self, perm: &[usize]) -> Var<'t> {
        let out = self.value().permuted(perm);
        self.unary(out, Op::Permute { a: self.id, perm: perm.to_vec() })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Var<'t> {
        let r = self.shape().len();
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let out = (*self.value())
            .clone()
            .reshaped(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.unary(out, Op::Reshape(self.id))
    }

    /// Rows `idx` of a tensor whose first axis indexes rows.
    pub fn gather_rows(&self, idx: &[usize]) -> Var<'t> {
        let a = self.value();
        let w = row_width(&a);
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&a.data[i * w..(i + 1) * w]);
        }
        let mut shape = a.shape.clone();
        shape[0] = idx.len();
        self.unary(Tensor { shape, data }, Op::GatherRows { a: self.id, idx: idx.into() })
    }

    /// Sums row `r` into output row `idx[r]`; output has `n_out` rows.
    pub fn scatter_add_rows(&self, idx: &[usize], n_out: usize) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape[0], idx.len(), "scatter_add_rows: index length");
        let w = row_width(&a);
        let mut data = vec![0.0; n_out * w];
        for (r, &i) in idx.iter().enumerate() {
            data[i * w..(i + 1) * w]
                .iter_mut()
                .zip(&a.data[r * w..(r + 1) * w])
                .for_each(|(x, y)| *x += y);
        }
        let mut shape = a.shape.clone();
        shape[0] = n_out;
        self.unary(Tensor { shape, data }, Op::ScatterAddRows { a: self.id, idx: idx.into() })
    }

    /// Element `idx[r]` of each row `r` of a 2-D tensor.
    pub fn pick(&self, idx: &[usize]) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape.len(), 2, "pick needs a matrix");
        assert_eq!(a.shape[0], idx.len(), "pick: index length");
        let w = a.shape[1];
        let data: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| a.data[r * w + c]).collect();
        self.unary(Tensor { shape: vec![idx.len()], data }, Op::Pick { a: self.id, idx: idx.into() })
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut shape = values[0].shape.clone();
        for v in &values[1..] {
            assert_eq!(v.shape.len(), shape.len(), "concat rank");
            for (ax, (&x, &y)) in v.shape.iter().zip(&shape).enumerate() {
                assert!(ax == axis || x == y, "concat: {:?} vs {:?}", v.shape, shape);
            }
        }
        shape[axis] = values.iter().map(|v| v.shape[axis]).sum();
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in &values {
                let w = v.shape[axis] * inner;
                data.extend_from_slice(&v.data[o * w..(o + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.record(Tensor { shape, data }, Op::Concat { parts: ids.clone(), axis }, &ids)
    }
}
