use std::rc::Rc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// A tensor value, optionally tied to a node on a [`Tape`].
///
/// Values without a node are constants: operations on them are evaluated but
/// never recorded, which is how frozen parameters and inference work.
#[derive(Debug, Clone)]
pub struct Var {
    value: Rc<Tensor>,
    node: Option<NodeId>,
}

impl Var {
    pub fn constant(value: Tensor) -> Self {
        Var {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.value.data()[0]
    }
}

#[derive(Debug)]
struct Operand {
    node: Option<NodeId>,
    value: Rc<Tensor>,
}

impl Operand {
    fn of(v: &Var) -> Self {
        Operand {
            node: v.node,
            value: Rc::clone(&v.value),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf(ParamId),
    MatMul(Operand, Operand),
    Add(Option<NodeId>, Option<NodeId>),
    Sub(Option<NodeId>, Option<NodeId>),
    Mul(Operand, Operand),
    Scale(NodeId, f64),
    /// Tensor times a one-element tensor.
    MulScalar(Operand, Operand),
    /// Tensor divided by a one-element tensor.
    DivScalar(Operand, Operand),
    Concat(Vec<(Option<NodeId>, usize)>),
    Slice {
        input: NodeId,
        start: usize,
    },
    GatherRow {
        table: NodeId,
        row: usize,
        cols: usize,
    },
    Tanh(NodeId, Rc<Tensor>),
    Sigmoid(NodeId, Rc<Tensor>),
    Exp(NodeId, Rc<Tensor>),
    Log(NodeId, Rc<Tensor>),
    Sum(NodeId),
    Softmax(NodeId, Rc<Tensor>),
    Mask(NodeId, Rc<Vec<f64>>),
    Clamp {
        input: NodeId,
        x: Rc<Tensor>,
        lo: f64,
        hi: f64,
    },
    Gru(Box<GruNode>),
}

/// Operands `[x, h, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h]` of a fused
/// GRU step with the gate activations kept for the backward pass.
#[derive(Debug)]
struct GruNode {
    operands: [Operand; 11],
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

/// `w x + u h + b` for a `[n, k]` weight `w` and `[n, n]` weight `u`.
fn affine(w: &[f64], u: &[f64], b: &[f64], x: &[f64], h: &[f64]) -> Vec<f64> {
    let (k, n) = (x.len(), h.len());
    (0..n)
        .map(|i| {
            let wx: f64 = w[i * k..(i + 1) * k].iter().zip(x).map(|(a, b)| a * b).sum();
            let uh: f64 = u[i * n..(i + 1) * n].iter().zip(h).map(|(a, b)| a * b).sum();
            wx + uh + b[i]
        })
        .collect()
}

#[derive(Debug)]
struct Node {
    op: Op,
    len: usize,
}

/// Records differentiable operations in evaluation order.
///
/// A tape built with [`Tape::inference`] never records: parameters bound to it
/// come back as constants.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn both_shapes(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> Var {
        self.record(op, Rc::new(value), tracked)
    }

    fn record(&mut self, op: Op, value: Rc<Tensor>, tracked: bool) -> Var {
        let node = if tracked && self.recording {
            self.nodes.push(Node {
                op,
                len: value.len(),
            });
            Some(self.nodes.len() - 1)
        } else {
            None
        };
        Var { value, node }
    }

    /// Bind a parameter. It is tracked only when `track` is set, the store marks
    /// it trainable, and this tape records.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, track: bool) -> Var {
        let value = store.shared_value(id);
        if track && self.recording && store.is_trainable(id) {
            self.nodes.push(Node {
                op: Op::Leaf(id),
                len: value.len(),
            });
            Var {
                value,
                node: Some(self.nodes.len() - 1),
            }
        } else {
            Var { value, node: None }
        }
    }

    /// Fused GRU step.
    ///
    /// `weights` is `[w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h]`; the
    /// result is `h + z ⊙ (h̃ − h)` with update gate `z = σ(W_z x + U_z h + b_z)`,
    /// reset gate `r = σ(W_r x + U_r h + b_r)` and candidate
    /// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`.
    pub fn gru(&mut self, x: &Var, h: &Var, weights: [&Var; 9]) -> Result<Var> {
        let (k, n) = (x.len(), h.len());
        for (i, w) in weights.iter().enumerate() {
            let expected: &[usize] = match i % 3 {
                0 => &[n, k],
                1 => &[n, n],
                _ => &[n],
            };
            if w.shape() != expected {
                return Err(Error::shape("gru", w.shape(), expected));
            }
        }
        let d = |i: usize| weights[i].data();
        let (xd, hd) = (x.data(), h.data());
        let z: Vec<f64> = affine(d(0), d(1), d(2), xd, hd).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = affine(d(3), d(4), d(5), xd, hd).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(hd).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = affine(d(6), d(7), d(8), xd, &rh).into_iter().map(f64::tanh).collect();
        let out: Vec<f64> = (0..n).map(|i| hd[i] + z[i] * (cand[i] - hd[i])).collect();
        let tracked = x.is_tracked() || h.is_tracked() || weights.iter().any(|w| w.is_tracked());
        if !(tracked && self.recording) {
            return Ok(Var::constant(Tensor::vector(out)));
        }
        let all = [
            x, h, weights[0], weights[1], weights[2], weights[3], weights[4], weights[5],
            weights[6], weights[7], weights[8],
        ];
        let node = GruNode {
            operands: all.map(Operand::of),
            z,
            r,
            cand,
        };
        Ok(self.push(Op::Gru(Box::new(node)), Tensor::vector(out), true))
    }

    /// Matrix product. Supports `[m,k]·[k] -> [m]`, `[k]·[k,n] -> [n]` and
    /// `[m,k]·[k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (av, bv) = (a.value.as_ref(), b.value.as_ref());
        let out = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2]) if k == k2 => {
                let mut out = vec![0.0; m];
                let (ad, bd) = (av.data(), bv.data());
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &ad[i * k..(i + 1) * k];
                    *o = row.iter().zip(bd).map(|(x, y)| x * y).sum();
                }
                Tensor::vector(out)
            }
            (&[k], &[k2, n]) if k == k2 => {
                let mut out = vec![0.0; n];
                let (ad, bd) = (av.data(), bv.data());
                for (i, &x) in ad.iter().enumerate() {
                    let row = &bd[i * n..(i + 1) * n];
                    for (o, y) in out.iter_mut().zip(row) {
                        *o += x * y;
                    }
                }
                Tensor::vector(out)
            }
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = vec![0.0; m * n];
                let (ad, bd) = (av.data(), bv.data());
                for i in 0..m {
                    for p in 0..k {
                        let x = ad[i * k + p];
                        let brow = &bd[p * n..(p + 1) * n];
                        for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                            *o += x * y;
                        }
                    }
                }
                Tensor::matrix(m, n, out)?
            }
            _ => return Err(Error::shape("matmul", av.shape(), bv.shape())),
        };
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.push(Op::MatMul(Operand::of(a), Operand::of(b)), out, tracked))
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        both_shapes("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.push(Op::Add(a.node, b.node), out, tracked))
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        both_shapes("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.push(Op::Sub(a.node, b.node), out, tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        both_shapes("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let tracked = a.is_tracked() || b.is_tracked();
        Ok(self.push(Op::Mul(Operand::of(a), Operand::of(b)), out, tracked))
    }

    /// Multiply by a fixed real.
    pub fn scale(&mut self, a: &Var, factor: f64) -> Var {
        let data = a.data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        match a.node {
            Some(n) => self.push(Op::Scale(n, factor), out, true),
            None => Var::constant(out),
        }
    }

    /// Multiply every element of `a` by the single element of `s`.
    pub fn mul_scalar(&mut self, a: &Var, s: &Var) -> Result<Var> {
        if s.len() != 1 {
            return Err(Error::shape("mul_scalar", a.shape(), s.shape()));
        }
        let k = s.item();
        let data = a.data().iter().map(|x| x * k).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let tracked = a.is_tracked() || s.is_tracked();
        Ok(self.push(Op::MulScalar(Operand::of(a), Operand::of(s)), out, tracked))
    }

    /// Divide every element of `a` by the single element of `s`.
    pub fn div_scalar(&mut self, a: &Var, s: &Var) -> Result<Var> {
        if s.len() != 1 {
            return Err(Error::shape("div_scalar", a.shape(), s.shape()));
        }
        if s.item() == 0.0 {
            return Err(Error::Domain {
                op: "div_scalar",
                detail: "division by zero".into(),
            });
        }
        let k = s.item();
        let data = a.data().iter().map(|x| x / k).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let tracked = a.is_tracked() || s.is_tracked();
        Ok(self.push(Op::DivScalar(Operand::of(a), Operand::of(s)), out, tracked))
    }

    /// Concatenate vectors end to end.
    pub fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let mut data = Vec::new();
        for p in parts {
            if p.value.rank() != 1 {
                return Err(Error::shape("concat", p.shape(), &[p.len()]));
            }
            data.extend_from_slice(p.data());
        }
        let tracked = parts.iter().any(|p| p.is_tracked());
        let op = Op::Concat(parts.iter().map(|p| (p.node, p.len())).collect());
        Ok(self.push(op, Tensor::vector(data), tracked))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[&Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Usage("stack_rows of nothing".into()))?;
        let cols = first.len();
        for r in rows {
            if r.value.rank() != 1 || r.len() != cols {
                return Err(Error::shape("stack_rows", first.shape(), r.shape()));
            }
        }
        let flat = self.concat(rows)?;
        let out = Tensor::matrix(rows.len(), cols, flat.value.data().to_vec())?;
        // Concat already recorded the data movement; only the shape changes.
        Ok(Var {
            value: Rc::new(out),
            node: flat.node,
        })
    }

    /// Contiguous sub-range `[start, start + len)` of a vector.
    pub fn slice(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        if a.value.rank() != 1 || start + len > a.len() {
            return Err(Error::shape("slice", a.shape(), &[start, len]));
        }
        let out = Tensor::vector(a.data()[start..start + len].to_vec());
        match a.node {
            Some(n) => Ok(self.push(Op::Slice { input: n, start }, out, true)),
            None => Ok(Var::constant(out)),
        }
    }

    /// Row `row` of a matrix, as a vector (embedding lookup).
    pub fn gather_row(&mut self, table: &Var, row: usize) -> Result<Var> {
        let (rows, cols) = table
            .value
            .dims2()
            .ok_or_else(|| Error::shape("gather_row", table.shape(), &[row]))?;
        if row >= rows {
            return Err(Error::Domain {
                op: "gather_row",
                detail: format!("row {row} out of range for {rows} rows"),
            });
        }
        let out = Tensor::vector(table.data()[row * cols..(row + 1) * cols].to_vec());
        match table.node {
            Some(n) => Ok(self.push(
                Op::GatherRow {
                    table: n,
                    row,
                    cols,
                },
                out,
                true,
            )),
            None => Ok(Var::constant(out)),
        }
    }

    fn unary(
        &mut self,
        a: &Var,
        f: impl Fn(f64) -> f64,
        make: impl FnOnce(NodeId, Rc<Tensor>) -> Op,
    ) -> Var {
        let data = a.data().iter().map(|&x| f(x)).collect();
        let out = Rc::new(Tensor::new(a.shape().to_vec(), data).expect("same shape"));
        match a.node {
            Some(n) => {
                let op = make(n, Rc::clone(&out));
                self.record(op, out, true)
            }
            None => Var {
                value: out,
                node: None,
            },
        }
    }

    pub fn tanh(&mut self, a: &Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: &Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn exp(&mut self, a: &Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: &Var) -> Result<Var> {
        if let Some(bad) = a.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let input = Rc::clone(&a.value);
        Ok(self.unary(a, f64::ln, move |n, _| Op::Log(n, input)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: &Var) -> Var {
        let s: f64 = a.data().iter().sum();
        match a.node {
            Some(n) => self.push(Op::Sum(n), Tensor::scalar(s), true),
            None => Var::constant(Tensor::scalar(s)),
        }
    }

    /// Softmax along the last axis, with the row maximum subtracted first.
    pub fn softmax(&mut self, a: &Var) -> Result<Var> {
        let cols = match a.shape() {
            [n] | [_, n] if *n > 0 => *n,
            _ => return Err(Error::shape("softmax", a.shape(), &[])),
        };
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(cols) {
            stable_softmax_in_place(row);
        }
        let out = Rc::new(Tensor::new(a.shape().to_vec(), data)?);
        Ok(match a.node {
            Some(n) => {
                let op = Op::Softmax(n, Rc::clone(&out));
                self.record(op, out, true)
            }
            None => Var {
                value: out,
                node: None,
            },
        })
    }

    /// Inverted dropout: at train time each element is kept with probability
    /// `keep_prob` and scaled by `1/keep_prob`; identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: &Var,
        keep_prob: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "keep probability {keep_prob} outside (0, 1]"
            )));
        }
        if !training || keep_prob == 1.0 {
            return Ok(a.clone());
        }
        let mask: Vec<f64> = (0..a.len())
            .map(|_| {
                if rng.gen::<f64>() < keep_prob {
                    1.0 / keep_prob
                } else {
                    0.0
                }
            })
            .collect();
        self.apply_mask(a, mask)
    }

    /// Elementwise product with a fixed mask.
    pub fn apply_mask(&mut self, a: &Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != a.len() {
            return Err(Error::shape("mask", a.shape(), &[mask.len()]));
        }
        let data = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        match a.node {
            Some(n) => Ok(self.push(Op::Mask(n, Rc::new(mask)), out, true)),
            None => Ok(Var::constant(out)),
        }
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let data = a.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let out = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        match a.node {
            Some(n) => self.push(
                Op::Clamp {
                    input: n,
                    x: Rc::clone(&a.value),
                    lo,
                    hi,
                },
                out,
                true,
            ),
            None => Var::constant(out),
        }
    }

    /// Reverse pass from a scalar loss, accumulating into trainable parameters.
    ///
    /// The tape is left intact, so running it twice doubles the gradients.
    pub fn backward(&self, loss: &Var, store: &mut ParamStore) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let Some(root) = loss.node else {
            return Ok(());
        };
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf(pid) => {
                    if store.is_trainable(*pid) {
                        for (acc, v) in store.grad_mut(*pid).data_mut().iter_mut().zip(&g) {
                            *acc += v;
                        }
                    }
                }
                Op::MatMul(a, b) => matmul_backward(&self.nodes, &mut grads, a, b, &g),
                Op::Add(a, b) => {
                    if let Some(a) = a {
                        accumulate(&self.nodes, &mut grads, *a, |buf| add_into(buf, &g));
                    }
                    if let Some(b) = b {
                        accumulate(&self.nodes, &mut grads, *b, |buf| add_into(buf, &g));
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(a) = a {
                        accumulate(&self.nodes, &mut grads, *a, |buf| add_into(buf, &g));
                    }
                    if let Some(b) = b {
                        accumulate(&self.nodes, &mut grads, *b, |buf| {
                            buf.iter_mut().zip(&g).for_each(|(o, v)| *o -= v)
                        });
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(an) = a.node {
                        accumulate(&self.nodes, &mut grads, an, |buf| {
                            for ((o, gv), y) in buf.iter_mut().zip(&g).zip(b.value.data()) {
                                *o += gv * y;
                            }
                        });
                    }
                    if let Some(bn) = b.node {
                        accumulate(&self.nodes, &mut grads, bn, |buf| {
                            for ((o, gv), x) in buf.iter_mut().zip(&g).zip(a.value.data()) {
                                *o += gv * x;
                            }
                        });
                    }
                }
                Op::Scale(a, k) => accumulate(&self.nodes, &mut grads, *a, |buf| {
                    buf.iter_mut().zip(&g).for_each(|(o, v)| *o += k * v)
                }),
                Op::MulScalar(a, s) => {
                    let k = s.value.data()[0];
                    if let Some(an) = a.node {
                        accumulate(&self.nodes, &mut grads, an, |buf| {
                            buf.iter_mut().zip(&g).for_each(|(o, v)| *o += k * v)
                        });
                    }
                    if let Some(sn) = s.node {
                        let dot: f64 = g.iter().zip(a.value.data()).map(|(x, y)| x * y).sum();
                        accumulate(&self.nodes, &mut grads, sn, |buf| buf[0] += dot);
                    }
                }
                Op::DivScalar(a, s) => {
                    let k = s.value.data()[0];
                    if let Some(an) = a.node {
                        accumulate(&self.nodes, &mut grads, an, |buf| {
                            buf.iter_mut().zip(&g).for_each(|(o, v)| *o += v / k)
                        });
                    }
                    if let Some(sn) = s.node {
                        let dot: f64 = g.iter().zip(a.value.data()).map(|(x, y)| x * y).sum();
                        accumulate(&self.nodes, &mut grads, sn, |buf| buf[0] -= dot / (k * k));
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &(part, len) in parts {
                        if let Some(p) = part {
                            let chunk = &g[offset..offset + len];
                            accumulate(&self.nodes, &mut grads, p, |buf| add_into(buf, chunk));
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, start } => {
                    accumulate(&self.nodes, &mut grads, *input, |buf| {
                        add_into(&mut buf[*start..*start + g.len()], &g)
                    });
                }
                Op::GatherRow { table, row, cols } => {
                    accumulate(&self.nodes, &mut grads, *table, |buf| {
                        add_into(&mut buf[row * cols..(row + 1) * cols], &g)
                    });
                }
                Op::Tanh(a, y) => accumulate(&self.nodes, &mut grads, *a, |buf| {
                    for ((o, gv), yv) in buf.iter_mut().zip(&g).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }),
                Op::Sigmoid(a, y) => accumulate(&self.nodes, &mut grads, *a, |buf| {
                    for ((o, gv), yv) in buf.iter_mut().zip(&g).zip(y.data()) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }),
                Op::Exp(a, y) => accumulate(&self.nodes, &mut grads, *a, |buf| {
                    for ((o, gv), yv) in buf.iter_mut().zip(&g).zip(y.data()) {
                        *o += gv * yv;
                    }
                }),
                Op::Log(a, x) => accumulate(&self.nodes, &mut grads, *a, |buf| {
                    for ((o, gv), xv) in buf.iter_mut().zip(&g).zip(x.data()) {
                        *o += gv / xv;
                    }
                }),
                Op::Sum(a) => {
                    let gv = g[0];
                    accumulate(&self.nodes, &mut grads, *a, |buf| {
                        buf.iter_mut().for_each(|o| *o += gv)
                    });
                }
                Op::Softmax(a, y) => {
                    let cols = *y.shape().last().expect("softmax output has an axis");
                    accumulate(&self.nodes, &mut grads, *a, |buf| {
                        for ((orow, grow), yrow) in buf
                            .chunks_mut(cols)
                            .zip(g.chunks(cols))
                            .zip(y.data().chunks(cols))
                        {
                            let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                            for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                                *o += yv * (gv - dot);
                            }
                        }
                    });
                }
                Op::Mask(a, mask) => accumulate(&self.nodes, &mut grads, *a, |buf| {
                    for ((o, gv), m) in buf.iter_mut().zip(&g).zip(mask.iter()) {
                        *o += gv * m;
                    }
                }),
                Op::Gru(node) => gru_backward(&self.nodes, &mut grads, node, &g),
                Op::Clamp { input, x, lo, hi } => {
                    accumulate(&self.nodes, &mut grads, *input, |buf| {
                        for ((o, gv), xv) in buf.iter_mut().zip(&g).zip(x.data()) {
                            if *xv >= *lo && *xv <= *hi {
                                *o += gv;
                            }
                        }
                    })
                }
            }
        }
        Ok(())
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    f: impl FnOnce(&mut [f64]),
) {
    let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].len]);
    f(buf);
}

fn add_into(buf: &mut [f64], g: &[f64]) {
    buf.iter_mut().zip(g).for_each(|(o, v)| *o += v);
}

/// Accumulate `g xᵀ` into an `[n, k]` weight gradient.
fn outer_into(buf: &mut [f64], g: &[f64], x: &[f64]) {
    let k = x.len();
    for (i, gi) in g.iter().enumerate() {
        for (o, xv) in buf[i * k..(i + 1) * k].iter_mut().zip(x) {
            *o += gi * xv;
        }
    }
}

/// Accumulate `wᵀ g` for an `[n, k]` weight into `out` of length `k`.
fn transpose_matvec_into(out: &mut [f64], w: &[f64], g: &[f64]) {
    let k = out.len();
    for (i, gi) in g.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(&w[i * k..(i + 1) * k]) {
            *o += gi * wv;
        }
    }
}

fn gru_backward(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &GruNode, g: &[f64]) {
    let [x, h, w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = &node.operands;
    let (xd, hd) = (x.value.data(), h.value.data());
    let (z, r, cand) = (&node.z, &node.r, &node.cand);
    let n = hd.len();
    let mut dx = vec![0.0; xd.len()];
    let mut dh: Vec<f64> = (0..n).map(|i| g[i] * (1.0 - z[i])).collect();

    let d_cand: Vec<f64> = (0..n).map(|i| g[i] * z[i] * (1.0 - cand[i] * cand[i])).collect();
    let rh: Vec<f64> = r.iter().zip(hd).map(|(a, b)| a * b).collect();
    let mut d_rh = vec![0.0; n];
    transpose_matvec_into(&mut dx, w_h.value.data(), &d_cand);
    transpose_matvec_into(&mut d_rh, u_h.value.data(), &d_cand);
    let d_z: Vec<f64> = (0..n)
        .map(|i| g[i] * (cand[i] - hd[i]) * z[i] * (1.0 - z[i]))
        .collect();
    let d_r: Vec<f64> = (0..n).map(|i| d_rh[i] * hd[i] * r[i] * (1.0 - r[i])).collect();
    for i in 0..n {
        dh[i] += d_rh[i] * r[i];
    }
    for (pre, w, u, b, input) in [
        (&d_z, w_z, u_z, b_z, hd),
        (&d_r, w_r, u_r, b_r, hd),
        (&d_cand, w_h, u_h, b_h, rh.as_slice()),
    ] {
        if let Some(id) = w.node {
            accumulate(nodes, grads, id, |buf| outer_into(buf, pre, xd));
        }
        if let Some(id) = u.node {
            accumulate(nodes, grads, id, |buf| outer_into(buf, pre, input));
        }
        if let Some(id) = b.node {
            accumulate(nodes, grads, id, |buf| add_into(buf, pre));
        }
    }
    transpose_matvec_into(&mut dx, w_z.value.data(), &d_z);
    transpose_matvec_into(&mut dx, w_r.value.data(), &d_r);
    transpose_matvec_into(&mut dh, u_z.value.data(), &d_z);
    transpose_matvec_into(&mut dh, u_r.value.data(), &d_r);
    if let Some(id) = x.node {
        accumulate(nodes, grads, id, |buf| add_into(buf, &dx));
    }
    if let Some(id) = h.node {
        accumulate(nodes, grads, id, |buf| add_into(buf, &dh));
    }
}

fn matmul_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    a: &Operand,
    b: &Operand,
    g: &[f64],
) {
    let (ad, bd) = (a.value.data(), b.value.data());
    match (a.value.shape(), b.value.shape()) {
        (&[m, k], &[_]) => {
            if let Some(an) = a.node {
                accumulate(nodes, grads, an, |buf| {
                    for i in 0..m {
                        let gi = g[i];
                        for (o, x) in buf[i * k..(i + 1) * k].iter_mut().zip(bd) {
                            *o += gi * x;
                        }
                    }
                });
            }
            if let Some(bn) = b.node {
                accumulate(nodes, grads, bn, |buf| {
                    for i in 0..m {
                        let gi = g[i];
                        for (o, x) in buf.iter_mut().zip(&ad[i * k..(i + 1) * k]) {
                            *o += gi * x;
                        }
                    }
                });
            }
        }
        (&[k], &[_, n]) => {
            if let Some(an) = a.node {
                accumulate(nodes, grads, an, |buf| {
                    for (i, o) in buf.iter_mut().enumerate().take(k) {
                        *o += bd[i * n..(i + 1) * n]
                            .iter()
                            .zip(g)
                            .map(|(x, y)| x * y)
                            .sum::<f64>();
                    }
                });
            }
            if let Some(bn) = b.node {
                accumulate(nodes, grads, bn, |buf| {
                    for (i, &x) in ad.iter().enumerate() {
                        for (o, gv) in buf[i * n..(i + 1) * n].iter_mut().zip(g) {
                            *o += x * gv;
                        }
                    }
                });
            }
        }
        (&[m, k], &[_, n]) => {
            if let Some(an) = a.node {
                // dA = G · Bᵀ
                accumulate(nodes, grads, an, |buf| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            buf[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
            }
            if let Some(bn) = b.node {
                // dB = Aᵀ · G
                accumulate(nodes, grads, bn, |buf| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            for (o, gv) in buf[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * gv;
                            }
                        }
                    }
                });
            }
        }
        _ => unreachable!("matmul shapes validated in forward"),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over a slice.
pub fn stable_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
