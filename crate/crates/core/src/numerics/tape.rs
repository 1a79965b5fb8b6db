//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each call appends one node
//! whose inputs are earlier nodes, so the record is topologically ordered by
//! construction and a single reverse sweep reaches every parameter that
//! contributed to the loss.

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tensor};

/// Floor applied before `log` wherever a probability may underflow.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Relu(Var),
    ClampMin(Var, f64),
    Powf(Var, f64),
    AddRow(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    PairwiseSqDist(Var),
    SumRows(Var),
    Sum(Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    Pick(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::dim(op, t.shape(), &[]))
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Row-wise softmax of a plain tensor (vectors are a single row).
pub fn softmax_values(t: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("softmax", t)?;
    let mut out = Tensor::zeros(t.shape());
    for i in 0..m {
        softmax_row(&t.data()[i * k..(i + 1) * k], &mut out.data_mut()[i * k..(i + 1) * k]);
    }
    Ok(out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn finish(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(op_name, &value)?;
        let rg = self.rg(inputs);
        Ok(self.push(value, op, rg))
    }

    /// A value that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf bound to a parameter; its gradient flows back into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.finish("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(())
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.finish("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.finish("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.finish("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.finish("scale", value, Op::Scale(a, factor), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.finish("exp", value, Op::Exp(a), &[a])
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = self.value(a).map(f64::ln);
        self.finish("log", value, Op::Log(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.finish("relu", value, Op::Relu(a), &[a])
    }

    /// `max(a, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(floor));
        self.finish("clamp_min", value, Op::ClampMin(a, floor), &[a])
    }

    /// `a^p` element-wise, defined for strictly positive `a`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "powf",
                detail: format!("non-positive base {bad}"),
            });
        }
        let value = self.value(a).map(|x| x.powf(p));
        self.finish("powf", value, Op::Powf(a, p), &[a])
    }

    /// Adds a length-`k` vector to every row of an `m x k` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, k) = dims2("add_row", self.value(a))?;
        if self.value(row).numel() != k {
            return Err(Error::dim("add_row", self.value(a).shape(), self.value(row).shape()));
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..m {
            for (v, b) in value.data_mut()[i * k..(i + 1) * k].iter_mut().zip(&r) {
                *v += b;
            }
        }
        self.finish("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        dims2("transpose", self.value(a))?;
        let value = self.value(a).transpose();
        self.finish("transpose", value, Op::Transpose(a), &[a])
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = softmax_values(self.value(a))?;
        self.finish("softmax", value, Op::SoftmaxRows(a), &[a])
    }

    /// Log-softmax over the last axis, via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, k) = dims2("log_softmax", t)?;
        let mut value = Tensor::zeros(t.shape());
        for i in 0..m {
            log_softmax_row(&t.data()[i * k..(i + 1) * k], &mut value.data_mut()[i * k..(i + 1) * k]);
        }
        self.finish("log_softmax", value, Op::LogSoftmaxRows(a), &[a])
    }

    /// `out[i][j] = ||row_i - row_j||^2`, computed by direct differences so the
    /// diagonal is exactly zero and the result exactly symmetric.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, _) = dims2("pairwise_sq_dist", t)?;
        let mut value = Tensor::zeros(&[m, m]);
        for i in 0..m {
            for j in (i + 1)..m {
                let d: f64 = t
                    .row(i)
                    .iter()
                    .zip(t.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                value.data_mut()[i * m + j] = d;
                value.data_mut()[j * m + i] = d;
            }
        }
        self.finish("pairwise_sq_dist", value, Op::PairwiseSqDist(a), &[a])
    }

    /// Row sums as an `m x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, _) = dims2("sum_rows", t)?;
        let sums = (0..m).map(|i| t.row(i).iter().sum()).collect();
        let value = Tensor::new(&[m, 1], sums)?;
        self.finish("sum_rows", value, Op::SumRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.finish("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows needs at least one input".into()))?;
        let k = dims2("concat_rows", self.value(first))?.1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            let (pm, pk) = dims2("concat_rows", t)?;
            if pk != k {
                return Err(Error::dim("concat_rows", self.value(first).shape(), t.shape()));
            }
            data.extend_from_slice(t.data());
            m += pm;
        }
        let value = Tensor::new(&[m, k], data)?;
        self.finish("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Selects rows by index (repeats allowed); the gradient scatter-adds.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, k) = dims2("gather_rows", t)?;
        if idx.is_empty() {
            return Err(Error::Contract("gather_rows needs at least one index".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            if i >= m {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    bound: m,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(&[idx.len(), k], data)?;
        self.finish("gather_rows", value, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, k) = dims2("slice_cols", t)?;
        if start >= end || end > k {
            return Err(Error::dim("slice_cols", t.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let value = Tensor::new(&[m, w], data)?;
        self.finish("slice_cols", value, Op::SliceCols(a, start, end), &[a])
    }

    /// `out[i] = a[i][idx[i]]`, one entry per row.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, k) = dims2("pick", t)?;
        if idx.len() != m {
            return Err(Error::dim("pick", t.shape(), &[idx.len()]));
        }
        let mut data = Vec::with_capacity(m);
        for (i, &j) in idx.iter().enumerate() {
            if j >= k {
                return Err(Error::Index {
                    what: "pick",
                    index: j,
                    bound: k,
                });
            }
            data.push(t.get(i, j));
        }
        let value = Tensor::vector(data)?;
        self.finish("pick", value, Op::Pick(a, idx.to_vec()), &[a])
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one. Entries for nodes off the gradient path are `None`.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("variable {} is not on this tape", loss.0)));
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(grads);
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Accumulates `d loss / d param` into every parameter reachable from `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.get_mut(*id).accumulate(g);
            }
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        // Reshape covers vector operands that were treated as a 1 x k row.
        let target = self.nodes[v.0].value.shape();
        let contrib = if contrib.shape() == target {
            contrib
        } else {
            contrib.reshape(target).expect("gradient shape matches operand")
        };
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let g2 = g.clone().reshape(&[av.rows(), bv.cols()])?;
                if self.requires_grad(*a) {
                    self.accum(grads, *a, g2.matmul(&bv.transpose())?);
                }
                if self.requires_grad(*b) {
                    self.accum(grads, *b, av.transpose().matmul(&g2)?);
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.accum(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                self.accum(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, s) => self.accum(grads, *a, g.map(|x| x * s)),
            Op::Exp(a) => self.accum(grads, *a, g.zip_map(out, |x, y| x * y)),
            Op::Log(a) => self.accum(grads, *a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Relu(a) => {
                self.accum(grads, *a, g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 }))
            }
            Op::ClampMin(a, floor) => self.accum(
                grads,
                *a,
                g.zip_map(self.value(*a), |x, y| if y > *floor { x } else { 0.0 }),
            ),
            Op::Powf(a, p) => self.accum(
                grads,
                *a,
                g.zip_map(self.value(*a), |x, y| x * p * y.powf(p - 1.0)),
            ),
            Op::AddRow(a, row) => {
                self.accum(grads, *a, g.clone());
                if self.requires_grad(*row) {
                    let (m, k) = (g.rows(), g.cols());
                    let mut col = vec![0.0; k];
                    for i in 0..m {
                        for (c, v) in col.iter_mut().zip(g.row(i)) {
                            *c += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.accum(grads, *row, Tensor::new(&shape, col)?);
                }
            }
            Op::Transpose(a) => self.accum(grads, *a, g.transpose()),
            Op::SoftmaxRows(a) => {
                let (m, k) = (out.rows(), out.cols());
                let mut ga = Tensor::zeros(out.shape());
                for i in 0..m {
                    let (y, gr) = (out.row(i), g.row(i));
                    let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..k {
                        ga.data_mut()[i * k + j] = y[j] * (gr[j] - dot);
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let (m, k) = (out.rows(), out.cols());
                let mut ga = Tensor::zeros(out.shape());
                for i in 0..m {
                    let (y, gr) = (out.row(i), g.row(i));
                    let total: f64 = gr.iter().sum();
                    for j in 0..k {
                        ga.data_mut()[i * k + j] = gr[j] - y[j].exp() * total;
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::PairwiseSqDist(a) => {
                let z = self.value(*a);
                let (m, k) = (z.rows(), z.cols());
                let mut ga = Tensor::zeros(z.shape());
                for i in 0..m {
                    for j in 0..m {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (g.get(i, j) + g.get(j, i));
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            ga.data_mut()[i * k + c] += w * (z.get(i, c) - z.get(j, c));
                        }
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::SumRows(a) => {
                let av = self.value(*a);
                let (m, k) = (av.rows(), av.cols());
                let mut ga = Tensor::zeros(av.shape());
                for i in 0..m {
                    let gi = g.data()[i];
                    ga.data_mut()[i * k..(i + 1) * k].iter_mut().for_each(|v| *v = gi);
                }
                self.accum(grads, *a, ga);
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accum(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::ConcatRows(parts) => {
                let k = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.numel();
                    if self.requires_grad(p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        self.accum(grads, p, Tensor::new(pv.shape(), slice)?);
                    }
                    offset += n;
                    debug_assert_eq!(n % k, 0);
                }
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let k = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for (r, &i) in idx.iter().enumerate() {
                    for (dst, src) in ga.data_mut()[i * k..(i + 1) * k].iter_mut().zip(g.row(r)) {
                        *dst += src;
                    }
                }
                self.accum(grads, *a, ga);
            }
            Op::SliceCols(a, start, end) => {
                let av = self.value(*a);
                let k = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for i in 0..av.rows() {
                    ga.data_mut()[i * k + start..i * k + end].copy_from_slice(g.row(i));
                }
                self.accum(grads, *a, ga);
            }
            Op::Pick(a, idx) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for (i, &j) in idx.iter().enumerate() {
                    ga.set(i, j, g.data()[i]);
                }
                self.accum(grads, *a, ga);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let x = t(&[&[1.0, -2.0], &[0.5, 3.0], &[4.0, 0.0]]);
        let i3 = tape.constant(Tensor::eye(3));
        let xv = tape.constant(x.clone());
        let y = tape.matmul(i3, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap());
        let r = tape.relu(a).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 0.0, 3.0]);

        let z = tape.constant(Tensor::vector(vec![0.0]).unwrap());
        let e = tape.exp(z).unwrap();
        assert_eq!(tape.value(e).data(), &[1.0]);

        let en = tape.constant(Tensor::vector(vec![std::f64::consts::E]).unwrap());
        let l = tape.log(en).unwrap();
        assert!((tape.value(l).data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(tape.log(a), Err(Error::Domain { .. })));
    }

    #[test]
    fn overflow_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1000.0]).unwrap());
        assert!(matches!(tape.exp(a), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let s = tape.softmax(a).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let b = tape.constant(Tensor::vector(vec![7.5; 4]).unwrap());
        let s = tape.softmax(b).unwrap();
        assert_eq!(tape.value(s).data(), &[0.25; 4]);

        let c = tape.constant(Tensor::vector(vec![1f64.ln(), 3f64.ln()]).unwrap());
        let s = tape.softmax(c).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let sq = tape.mul(xv, xv).unwrap();
        tape.backward(sq, &mut store).unwrap();
        assert_eq!(store.grad(x).item(), 6.0);
    }

    #[test]
    fn matrix_vector_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::eye(2));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let v = tape.constant(t(&[&[1.0], &[1.0]]));
        let y = tape.matmul(wv, v).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let sq = tape.mul(xv, xv).unwrap();
        tape.backward(sq, &mut store).unwrap();
        tape.backward(sq, &mut store).unwrap();
        assert_eq!(store.grad(x).item(), 12.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        assert!(matches!(tape.backward(xv, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn pairwise_distance_is_exactly_symmetric() {
        let mut tape = Tape::new();
        let z = tape.constant(t(&[&[0.1, 0.2], &[0.3, -0.7], &[1.0, 1.0]]));
        let d = tape.pairwise_sq_dist(z).unwrap();
        let dv = tape.value(d);
        for i in 0..3 {
            assert_eq!(dv.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(dv.get(i, j), dv.get(j, i));
            }
        }
        assert!((dv.get(0, 1) - (0.04 + 0.81)).abs() < 1e-15);
    }
}
