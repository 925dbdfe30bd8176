//! Reverse-mode differentiation tape over dense `f64` vectors.
//!
//! Nodes are appended in evaluation order into a single value arena, which makes
//! the node list its own topological order: [`Tape::backward`] walks it once in
//! reverse. Parameters enter the tape through [`Tape::param`] with a slot number;
//! their gradients are gathered per slot in the returned [`Gradients`].

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: u32,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param { slot: usize },
    Slice { src: u32, start: usize },
    MatVec { w: u32, x: u32 },
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Min(u32, u32),
    Sigmoid(u32),
    Tanh(u32),
    Exp(u32),
    Abs(u32),
    LogSigmoid(u32),
    Scale(u32, f64),
    Offset(u32),
    Clamp { src: u32, lo: f64, hi: f64 },
    LogSoftmaxAt { logits: u32, index: usize },
    WeightedSum(Vec<(u32, f64)>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    start: usize,
    len: usize,
}

/// Per-slot parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub slots: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(shapes: &[usize]) -> Self {
        Self {
            slots: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn slot(&self, slot: usize) -> &[f64] {
        self.slots.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Adds `scale * other` slot by slot, growing as needed.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), Vec::new());
        }
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if theirs.is_empty() {
                continue;
            }
            if mine.is_empty() {
                mine.resize(theirs.len(), 0.0);
            }
            kernels::axpy(scale, theirs, mine);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flat_map(|s| s.iter_mut()) {
            *g *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.is_finite())
    }
}

/// Single-writer recording of one loss computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    data: Vec<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> u32 {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[self.idx(v) as usize]
    }

    fn push_with(&mut self, op: Op, len: usize, fill: impl FnOnce(&[f64], &mut [f64])) -> Var {
        let start = self.data.len();
        self.data.resize(start + len, 0.0);
        let (before, out) = self.data.split_at_mut(start);
        fill(before, out);
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { op, start, len });
        Var {
            tape: self.id,
            index,
        }
    }

    fn range(&self, i: u32) -> std::ops::Range<usize> {
        let n = &self.nodes[i as usize];
        n.start..n.start + n.len
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = self.node(v);
        &self.data[n.start..n.start + n.len]
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "node is not a scalar");
        value[0]
    }

    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push_with(Op::Constant, values.len(), |_, out| out.copy_from_slice(values))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(&[value])
    }

    /// Binds a parameter tensor; its gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, values: &[f64]) -> Var {
        self.push_with(Op::Param { slot }, values.len(), |_, out| {
            out.copy_from_slice(values)
        })
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Var {
        let s = self.idx(src);
        let r = self.range(s);
        assert!(start + len <= r.len(), "slice out of bounds");
        let from = r.start + start;
        self.push_with(Op::Slice { src: s, start }, len, |data, out| {
            out.copy_from_slice(&data[from..from + len])
        })
    }

    /// `W x` for a row-major matrix node `w` whose column count is `len(x)`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (wi, xi) = (self.idx(w), self.idx(x));
        let (wr, xr) = (self.range(wi), self.range(xi));
        assert!(
            !xr.is_empty() && wr.len() % xr.len() == 0,
            "matvec shape mismatch"
        );
        let rows = wr.len() / xr.len();
        self.push_with(Op::MatVec { w: wi, x: xi }, rows, |data, out| {
            kernels::matvec(&data[wr], &data[xr], out)
        })
    }

    fn binary(&mut self, a: Var, b: Var, op: fn(u32, u32) -> Op, f: fn(f64, f64) -> f64) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let (ar, br) = (self.range(ai), self.range(bi));
        assert_eq!(ar.len(), br.len(), "elementwise shape mismatch");
        self.push_with(op(ai, bi), ar.len(), |data, out| {
            for ((o, x), y) in out.iter_mut().zip(&data[ar]).zip(&data[br]) {
                *o = f(*x, *y);
            }
        })
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ai = self.idx(a);
        let ar = self.range(ai);
        self.push_with(op, ar.len(), |data, out| {
            for (o, x) in out.iter_mut().zip(&data[ar]) {
                *o = f(*x);
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Min, |x, y| if y < x { y } else { x })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::Sigmoid(i), kernels::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::Tanh(i), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::Exp(i), f64::exp)
    }

    /// `|x|` with derivative `sign(x)` and 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::Abs(i), f64::abs)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::LogSigmoid(i), kernels::log_sigmoid)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::Scale(i, factor), move |x| x * factor)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `x + shift` for a constant shift.
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::Offset(i), move |x| x + shift)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let i = self.idx(a);
        self.unary(a, Op::Clamp { src: i, lo, hi }, move |x| x.clamp(lo, hi))
    }

    /// Scalar `log softmax(logits)[index]`.
    pub fn log_softmax_at(&mut self, logits: Var, index: usize) -> Var {
        let li = self.idx(logits);
        let lr = self.range(li);
        assert!(index < lr.len(), "log_softmax index out of range");
        self.push_with(Op::LogSoftmaxAt { logits: li, index }, 1, |data, out| {
            out[0] = kernels::log_softmax_at(&data[lr], index)
        })
    }

    /// `Σ w_i x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let terms: Vec<(u32, f64)> = terms.iter().map(|&(v, w)| (self.idx(v), w)).collect();
        for &(i, _) in &terms {
            assert_eq!(self.nodes[i as usize].len, 1, "weighted_sum over non-scalar");
        }
        let mut acc = 0.0;
        for &(i, w) in &terms {
            acc += w * self.data[self.nodes[i as usize].start];
        }
        self.push_with(Op::WeightedSum(terms), 1, |_, out| out[0] = acc)
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let weighted: Vec<(Var, f64)> = terms.iter().map(|&v| (v, 1.0)).collect();
        self.weighted_sum(&weighted)
    }

    /// Reverse sweep from a scalar `loss`, returning per-slot parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.index as usize >= self.nodes.len() {
            return Err(Error::DetachedNode);
        }
        let root = loss.index as usize;
        if self.nodes[root].len != 1 {
            return Err(Error::DetachedNode);
        }
        let mut grad = vec![0.0; self.data.len()];
        grad[self.nodes[root].start] = 1.0;
        let mut out = Gradients::default();

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            let (before, rest) = grad.split_at_mut(node.start);
            let g = &rest[..node.len];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let value = &self.data[node.start..node.start + node.len];
            let gslice = |j: u32| self.range(j);
            match &node.op {
                Op::Constant => {}
                Op::Param { slot } => {
                    if out.slots.len() <= *slot {
                        out.slots.resize(slot + 1, Vec::new());
                    }
                    let dst = &mut out.slots[*slot];
                    if dst.is_empty() {
                        dst.resize(node.len, 0.0);
                    }
                    kernels::axpy(1.0, g, dst);
                }
                Op::Slice { src, start } => {
                    let r = gslice(*src);
                    kernels::axpy(1.0, g, &mut before[r.start + start..r.start + start + node.len]);
                }
                Op::MatVec { w, x } => {
                    let (wr, xr) = (gslice(*w), gslice(*x));
                    let cols = xr.len();
                    let xv = &self.data[xr.clone()];
                    let wv = &self.data[wr.clone()];
                    for (row, &gi) in g.iter().enumerate() {
                        if gi == 0.0 {
                            continue;
                        }
                        let off = wr.start + row * cols;
                        kernels::axpy(gi, xv, &mut before[off..off + cols]);
                        kernels::axpy(gi, &wv[row * cols..(row + 1) * cols], &mut before[xr.clone()]);
                    }
                }
                Op::Add(a, b) => {
                    kernels::axpy(1.0, g, &mut before[gslice(*a)]);
                    kernels::axpy(1.0, g, &mut before[gslice(*b)]);
                }
                Op::Sub(a, b) => {
                    kernels::axpy(1.0, g, &mut before[gslice(*a)]);
                    kernels::axpy(-1.0, g, &mut before[gslice(*b)]);
                }
                Op::Mul(a, b) => {
                    let (ar, br) = (gslice(*a), gslice(*b));
                    for k in 0..node.len {
                        let (x, y) = (self.data[ar.start + k], self.data[br.start + k]);
                        before[ar.start + k] += g[k] * y;
                        before[br.start + k] += g[k] * x;
                    }
                }
                Op::Min(a, b) => {
                    let (ar, br) = (gslice(*a), gslice(*b));
                    for k in 0..node.len {
                        let (x, y) = (self.data[ar.start + k], self.data[br.start + k]);
                        if y < x {
                            before[br.start + k] += g[k];
                        } else {
                            before[ar.start + k] += g[k];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let r = gslice(*a);
                    for k in 0..node.len {
                        before[r.start + k] += g[k] * value[k] * (1.0 - value[k]);
                    }
                }
                Op::Tanh(a) => {
                    let r = gslice(*a);
                    for k in 0..node.len {
                        before[r.start + k] += g[k] * (1.0 - value[k] * value[k]);
                    }
                }
                Op::Exp(a) => {
                    let r = gslice(*a);
                    for k in 0..node.len {
                        before[r.start + k] += g[k] * value[k];
                    }
                }
                Op::Abs(a) => {
                    let r = gslice(*a);
                    for k in 0..node.len {
                        let x = self.data[r.start + k];
                        let sign = if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        before[r.start + k] += g[k] * sign;
                    }
                }
                Op::LogSigmoid(a) => {
                    let r = gslice(*a);
                    for k in 0..node.len {
                        let x = self.data[r.start + k];
                        before[r.start + k] += g[k] * kernels::sigmoid(-x);
                    }
                }
                Op::Scale(a, factor) => {
                    kernels::axpy(*factor, g, &mut before[gslice(*a)]);
                }
                Op::Offset(a) => {
                    kernels::axpy(1.0, g, &mut before[gslice(*a)]);
                }
                Op::Clamp { src, lo, hi } => {
                    let r = gslice(*src);
                    for k in 0..node.len {
                        let x = self.data[r.start + k];
                        if x >= *lo && x <= *hi {
                            before[r.start + k] += g[k];
                        }
                    }
                }
                Op::LogSoftmaxAt { logits, index } => {
                    let r = gslice(*logits);
                    let lv = &self.data[r.clone()];
                    // log p_index = l_index - lse, so lse = l_index - value.
                    let lse = lv[*index] - value[0];
                    for k in 0..lv.len() {
                        let p = (lv[k] - lse).exp();
                        let delta = if k == *index { 1.0 } else { 0.0 };
                        before[r.start + k] += g[0] * (delta - p);
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(j, w) in terms {
                        before[self.nodes[j as usize].start] += g[0] * w;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&mut Tape, Var) -> Var, x0: &[f64]) {
        let mut tape = Tape::new();
        let x = tape.param(0, x0);
        let y = f(&mut tape, x);
        let grads = tape.backward(y).unwrap();
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut p = x0.to_vec();
                p[i] += delta;
                let mut t = Tape::new();
                let xv = t.param(0, &p);
                let yv = f(&mut t, xv);
                t.scalar(yv)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grads.slot(0)[i];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "component {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let p = tape.param(0, &[1.0, 2.0]);
        let _ = tape.scale(p, 3.0);
        let c = tape.constant_scalar(4.0);
        let grads = tape.backward(c).unwrap();
        assert!(grads.slot(0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn squared_norm_gradient_is_twice_params() {
        let values = [0.5, -1.5, 2.0];
        let mut tape = Tape::new();
        let p = tape.param(0, &values);
        let sq = tape.mul(p, p);
        let parts: Vec<Var> = (0..3).map(|i| tape.slice(sq, i, 1)).collect();
        let loss = tape.sum(&parts);
        assert_eq!(tape.scalar(loss), 0.25 + 2.25 + 4.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.slot(0), &[1.0, -3.0, 4.0]);
    }

    #[test]
    fn detached_and_foreign_nodes_are_rejected() {
        let mut a = Tape::new();
        let b = {
            let mut t = Tape::new();
            t.constant_scalar(1.0)
        };
        assert!(matches!(a.backward(b), Err(Error::DetachedNode)));
        let v = a.constant(&[1.0, 2.0]);
        assert!(matches!(a.backward(v), Err(Error::DetachedNode)));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        fd_check(
            |t, x| {
                let a = t.slice(x, 0, 3);
                let b = t.slice(x, 3, 3);
                let s = t.sigmoid(a);
                let th = t.tanh(b);
                let m = t.mul(s, th);
                let d = t.sub(m, a);
                let e = t.exp(d);
                let parts: Vec<Var> = (0..3).map(|i| t.slice(e, i, 1)).collect();
                let w = t.weighted_sum(&[(parts[0], 0.5), (parts[1], -2.0), (parts[2], 1.5)]);
                let ls = t.log_sigmoid(w);
                let ab = t.abs(ls);
                t.offset(ab, 3.0)
            },
            &[0.3, -0.7, 1.1, 0.2, -0.4, 0.9],
        );
    }

    #[test]
    fn matvec_and_log_softmax_match_finite_differences() {
        // x = [W (2x3) | v (3)]
        fd_check(
            |t, x| {
                let w = t.slice(x, 0, 6);
                let v = t.slice(x, 6, 3);
                let y = t.matvec(w, v);
                let z = t.scale(y, 1.7);
                t.log_softmax_at(z, 1)
            },
            &[0.1, -0.2, 0.3, 0.5, 0.4, -0.6, 1.0, 2.0, -1.0],
        );
    }

    #[test]
    fn clamp_and_min_route_gradients() {
        let mut tape = Tape::new();
        let p = tape.param(0, &[1.5, 0.9]);
        let c = tape.clamp(p, 0.8, 1.2);
        let q = tape.param(1, &[0.0, 1.0]);
        let m = tape.min(c, q);
        let parts: Vec<Var> = (0..2).map(|i| tape.slice(m, i, 1)).collect();
        let loss = tape.sum(&parts);
        let g = tape.backward(loss).unwrap();
        // min picks q[0]=0 < 1.2 and the unclamped 0.9 < 1.0
        assert_eq!(g.slot(0), &[0.0, 1.0]);
        assert_eq!(g.slot(1), &[1.0, 0.0]);
    }
}
