//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation in creation order, so the node list
//! is already topologically sorted and `backward` is a single reverse sweep.
//! Leaves may borrow their payload (model weights are never copied onto the
//! tape), which ties the graph's lifetime to the parameters it reads.
//!
//! Gradients accumulate on leaves only. Each `backward` call computes fresh
//! intermediate adjoints, so calling it twice without [`Graph::zero_grad`]
//! leaves exactly twice the single-pass gradient on every leaf.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU32, Ordering};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

/// Deliberate backward-pass corruption, used to prove the gradient checker
/// actually catches broken derivatives.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    MatmulBackwardSignFlip,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Log(Var),
    ClampMin(Var, f64),
    RowSoftmax(Var),
    ConcatCols(Var, Var),
    VStack(Var, Var),
    Transpose(Var),
    MeanRows(Var),
    SumAll(Var),
    L1RowDiffMean(Var, Var),
    FrobSq(Var),
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
    requires_grad: bool,
    grad: Option<Matrix>,
}

pub struct Graph<'p> {
    id: u32,
    nodes: Vec<Node<'p>>,
    kink_gap: f64,
    fault: Option<Fault>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            kink_gap: f64::INFINITY,
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance to a non-differentiable point (ReLU at 0, |.| at 0,
    /// clamp floor) seen by any recorded op so far.
    pub fn kink_gap(&self) -> f64 {
        self.kink_gap
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op, requires_grad: bool) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self.id,
            idx,
        }
    }

    fn node(&self, v: Var) -> &Node<'p> {
        assert_eq!(
            v.graph, self.id,
            "Var used with a graph that did not create it"
        );
        &self.nodes[v.idx as usize]
    }

    /// Trainable leaf borrowing its payload.
    pub fn param(&mut self, m: &'p Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, true)
    }

    /// Non-trainable leaf borrowing its payload.
    pub fn constant(&mut self, m: &'p Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, false)
    }

    pub fn leaf(&mut self, m: Matrix, requires_grad: bool) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a leaf (zeros if nothing has flowed into it).
    pub fn grad(&self, v: Var) -> Matrix {
        let node = self.node(v);
        node.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    /// Moves a leaf's gradient out, leaving it zeroed.
    pub fn take_grad(&mut self, v: Var) -> Matrix {
        assert_eq!(
            v.graph, self.id,
            "Var used with a graph that did not create it"
        );
        let node = &mut self.nodes[v.idx as usize];
        node.grad
            .take()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    fn note_kink(&mut self, gap: f64) {
        if gap < self.kink_gap {
            self.kink_gap = gap;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| factor * x);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(value), Op::Scale(a, factor), rg)
    }

    /// Adds a `1 x m` row vector to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != (1, sa.1) {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(b) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Cow::Owned(value), Op::AddRow(a, bias), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let input = self.value(a);
        let gap = input
            .data()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let value = input.map(|x| if x > 0.0 { x } else { 0.0 });
        self.note_kink(gap);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(value), Op::Relu(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let input = self.value(a);
        if let Some(bad) = input.data().iter().find(|&&x| x.is_nan() || x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
        let value = input.map(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(Cow::Owned(value), Op::Log(a), rg))
    }

    /// `max(a, floor)` elementwise; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let input = self.value(a);
        let gap = input
            .data()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min((v - floor).abs()));
        let value = input.map(|x| if x > floor { x } else { floor });
        self.note_kink(gap);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(value), Op::ClampMin(a, floor), rg)
    }

    /// Softmax along each row, shifted by the row maximum.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(value), Op::RowSoftmax(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::ConcatCols(a, b), rg))
    }

    /// Stacks `b` under `a`; column counts must agree.
    pub fn vstack(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Matrix::vstack(&[self.value(a), self.value(b)])?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::VStack(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(value), Op::Transpose(a), rg)
    }

    /// Mean over rows of each row's sum: `(1/n) * sum_ij a_ij`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(Error::Contract("mean_rows of a matrix with no rows".into()));
        }
        let value = Matrix::scalar(m.sum() / m.rows() as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(Cow::Owned(value), Op::MeanRows(a), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(value), Op::SumAll(a), rg)
    }

    /// Mean over rows of the row-wise L1 distance between `p` and `q`.
    pub fn l1_rowdiff_mean(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_shape("l1_rowdiff_mean", p, q)?;
        let (pm, qm) = (self.value(p), self.value(q));
        if pm.rows() == 0 {
            return Err(Error::Contract(
                "l1_rowdiff_mean of a matrix with no rows".into(),
            ));
        }
        let mut total = 0.0;
        let mut gap = f64::INFINITY;
        for (x, y) in pm.data().iter().zip(qm.data()) {
            let d = (x - y).abs();
            total += d;
            gap = gap.min(d);
        }
        let value = Matrix::scalar(total / pm.rows() as f64);
        self.note_kink(gap);
        let rg = self.rg(&[p, q]);
        Ok(self.push(Cow::Owned(value), Op::L1RowDiffMean(p, q), rg))
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).frob_sq());
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(value), Op::FrobSq(a), rg)
    }

    /// Accumulates d(root)/d(leaf) into every trainable leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 root, got {}x{}",
                shape.0, shape.1
            )));
        }
        if !self.node(root).requires_grad {
            return Ok(());
        }
        let end = root.index() + 1;
        let mut adj: Vec<Option<Matrix>> = (0..end).map(|_| None).collect();
        adj[root.index()] = Some(Matrix::scalar(1.0));

        for i in (0..end).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match self.nodes[i].op {
                Op::Leaf => {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let sign = match self.fault {
                        Some(Fault::MatmulBackwardSignFlip) => -1.0,
                        None => 1.0,
                    };
                    if self.nodes[a.index()].requires_grad {
                        let bv = &self.nodes[b.index()].value;
                        let slot = zeroed(&mut adj, a, &self.nodes[a.index()].value);
                        gemm(sign, &g, false, bv, true, 1.0, slot);
                    }
                    if self.nodes[b.index()].requires_grad {
                        let av = &self.nodes[a.index()].value;
                        let slot = zeroed(&mut adj, b, &self.nodes[b.index()].value);
                        gemm(1.0, av, true, &g, false, 1.0, slot);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[b.index()].requires_grad {
                        accumulate(&mut adj, b, &g, 1.0);
                    }
                    if self.nodes[a.index()].requires_grad {
                        accumulate_owned(&mut adj, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[b.index()].requires_grad {
                        accumulate(&mut adj, b, &g, -1.0);
                    }
                    if self.nodes[a.index()].requires_grad {
                        accumulate_owned(&mut adj, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.index()].requires_grad {
                        let d = g.zip_map(&self.nodes[b.index()].value, |x, y| x * y);
                        accumulate_owned(&mut adj, a, d);
                    }
                    if self.nodes[b.index()].requires_grad {
                        let d = g.zip_map(&self.nodes[a.index()].value, |x, y| x * y);
                        accumulate_owned(&mut adj, b, d);
                    }
                }
                Op::Scale(a, factor) => accumulate(&mut adj, a, &g, factor),
                Op::AddRow(a, bias) => {
                    if self.nodes[bias.index()].requires_grad {
                        let mut db = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (acc, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                        accumulate_owned(&mut adj, bias, db);
                    }
                    if self.nodes[a.index()].requires_grad {
                        accumulate_owned(&mut adj, a, g);
                    }
                }
                Op::Relu(a) => {
                    let d = g.zip_map(
                        &self.nodes[a.index()].value,
                        |gv, x| {
                            if x > 0.0 {
                                gv
                            } else {
                                0.0
                            }
                        },
                    );
                    accumulate_owned(&mut adj, a, d);
                }
                Op::Log(a) => {
                    let d = g.zip_map(&self.nodes[a.index()].value, |gv, x| gv / x);
                    accumulate_owned(&mut adj, a, d);
                }
                Op::ClampMin(a, floor) => {
                    let d = g.zip_map(&self.nodes[a.index()].value, |gv, x| {
                        if x > floor {
                            gv
                        } else {
                            0.0
                        }
                    });
                    accumulate_owned(&mut adj, a, d);
                }
                Op::RowSoftmax(a) => {
                    let y = &self.nodes[i].value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((out, p), q) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *out = p * (q - dot);
                        }
                    }
                    accumulate_owned(&mut adj, a, d);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.nodes[a.index()].value.cols();
                    let total = g.cols();
                    if self.nodes[a.index()].requires_grad {
                        let da = Matrix::from_fn(g.rows(), split, |r, c| g.get(r, c));
                        accumulate_owned(&mut adj, a, da);
                    }
                    if self.nodes[b.index()].requires_grad {
                        let db =
                            Matrix::from_fn(g.rows(), total - split, |r, c| g.get(r, split + c));
                        accumulate_owned(&mut adj, b, db);
                    }
                }
                Op::VStack(a, b) => {
                    let split = self.nodes[a.index()].value.rows();
                    let cols = g.cols();
                    let data = g.into_vec();
                    let (top, bottom) = data.split_at(split * cols);
                    if self.nodes[a.index()].requires_grad {
                        let da = Matrix::from_vec(split, cols, top.to_vec())?;
                        accumulate_owned(&mut adj, a, da);
                    }
                    if self.nodes[b.index()].requires_grad {
                        let rows_b = self.nodes[b.index()].value.rows();
                        let db = Matrix::from_vec(rows_b, cols, bottom.to_vec())?;
                        accumulate_owned(&mut adj, b, db);
                    }
                }
                Op::Transpose(a) => accumulate_owned(&mut adj, a, g.transpose()),
                Op::MeanRows(a) => {
                    let m = &self.nodes[a.index()].value;
                    let d = Matrix::filled(m.rows(), m.cols(), g.item() / m.rows() as f64);
                    accumulate_owned(&mut adj, a, d);
                }
                Op::SumAll(a) => {
                    let m = &self.nodes[a.index()].value;
                    accumulate_owned(&mut adj, a, Matrix::filled(m.rows(), m.cols(), g.item()));
                }
                Op::L1RowDiffMean(p, q) => {
                    let (pm, qm) = (&self.nodes[p.index()].value, &self.nodes[q.index()].value);
                    let w = g.item() / pm.rows() as f64;
                    let d = pm.zip_map(qm, |x, y| w * sign(x - y));
                    if self.nodes[q.index()].requires_grad {
                        accumulate(&mut adj, q, &d, -1.0);
                    }
                    if self.nodes[p.index()].requires_grad {
                        accumulate_owned(&mut adj, p, d);
                    }
                }
                Op::FrobSq(a) => {
                    let w = 2.0 * g.item();
                    let d = self.nodes[a.index()].value.map(|x| w * x);
                    accumulate_owned(&mut adj, a, d);
                }
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zeroed<'a>(adj: &'a mut [Option<Matrix>], v: Var, like: &Matrix) -> &'a mut Matrix {
    adj[v.index()].get_or_insert_with(|| Matrix::zeros(like.rows(), like.cols()))
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: &Matrix, factor: f64) {
    match &mut adj[v.index()] {
        Some(acc) => acc.axpy(factor, g),
        slot @ None => {
            *slot = Some(if factor == 1.0 {
                g.clone()
            } else {
                g.map(|x| factor * x)
            })
        }
    }
}

fn accumulate_owned(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.index()] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_gradient_is_ones() {
        let eye = Matrix::identity(2);
        let x = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let mut g = Graph::new();
        let i = g.constant(&eye);
        let xv = g.param(&x);
        let y = g.matmul(i, xv).unwrap();
        assert_eq!(g.value(y), &x);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(xv), Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn relu_values_and_subgradient_at_zero() {
        let x = Matrix::from_rows(&[&[-1.0, 0.0, 2.0]]);
        let mut g = Graph::new();
        let xv = g.param(&x);
        let y = g.relu(xv);
        assert_eq!(g.value(y), &Matrix::from_rows(&[&[0.0, 0.0, 2.0]]));
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(xv), Matrix::from_rows(&[&[0.0, 0.0, 1.0]]));
    }

    #[test]
    fn log_of_one() {
        let x = Matrix::scalar(1.0);
        let mut g = Graph::new();
        let xv = g.param(&x);
        let y = g.log(xv).unwrap();
        assert_eq!(g.value(y).item(), 0.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(xv).item(), 1.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let x = Matrix::from_rows(&[&[1.0, 0.0]]);
        let mut g = Graph::new();
        let xv = g.param(&x);
        assert!(matches!(g.log(xv), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let x = Matrix::from_rows(&[&[0.0, 0.0], &[1000.0, 0.0]]);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let y = g.row_softmax(xv);
        let v = g.value(y);
        assert_eq!(v.row(0), &[0.5, 0.5]);
        assert_eq!(v.get(1, 0), 1.0);
        assert!(v.get(1, 1) >= 0.0 && v.get(1, 1) < 1e-300);
        assert!(v.is_finite());
    }

    #[test]
    fn concat_values() {
        let a = Matrix::from_rows(&[&[1.0], &[2.0]]);
        let b = Matrix::from_rows(&[&[3.0], &[4.0]]);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(&a), g.constant(&b));
        let c = g.concat_cols(av, bv).unwrap();
        assert_eq!(g.value(c), &Matrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]));
        let z = Matrix::zeros(2, 0);
        let zv = g.constant(&z);
        let c2 = g.concat_cols(zv, bv).unwrap();
        assert_eq!(g.value(c2), &b);
        let bad = Matrix::zeros(3, 1);
        let badv = g.constant(&bad);
        assert!(matches!(
            g.concat_cols(av, badv),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn reductions_direct_values() {
        let a = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 0.0]]);
        let mut g = Graph::new();
        let av = g.constant(&a);
        let f = g.frob_sq(av);
        assert_eq!(g.value(f).item(), 4.0);
        let d = g.l1_rowdiff_mean(av, av).unwrap();
        assert_eq!(g.value(d).item(), 0.0);
        let m = g.mean_rows(av).unwrap();
        assert_eq!(g.value(m).item(), 1.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let a = Matrix::zeros(2, 2);
        let mut g = Graph::new();
        let av = g.param(&a);
        assert!(matches!(g.backward(av), Err(Error::Contract(_))));
    }

    #[test]
    fn leaf_used_twice_doubles_gradient() {
        let a = Matrix::from_rows(&[&[1.0, 2.0]]);
        let mut g = Graph::new();
        let av = g.param(&a);
        let s = g.add(av, av).unwrap();
        let t = g.sum_all(s);
        g.backward(t).unwrap();
        assert_eq!(g.grad(av), Matrix::filled(1, 2, 2.0));
    }

    #[test]
    fn second_backward_exactly_doubles_and_reset_zeroes() {
        let w = Matrix::from_rows(&[&[0.3, -1.2], &[0.7, 0.1]]);
        let x = Matrix::from_rows(&[&[1.5, -0.5]]);
        let mut g = Graph::new();
        let wv = g.param(&w);
        let xv = g.constant(&x);
        let h = g.matmul(xv, wv).unwrap();
        let p = g.row_softmax(h);
        let l = g.frob_sq(p);
        g.backward(l).unwrap();
        let once = g.grad(wv);
        g.backward(l).unwrap();
        let twice = g.grad(wv);
        assert_eq!(twice, once.map(|v| 2.0 * v));
        g.zero_grad();
        assert_eq!(g.grad(wv), Matrix::zeros(2, 2));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let w = Matrix::from_rows(&[&[1.0]]);
        let x = Matrix::from_rows(&[&[2.0]]);
        let mut g = Graph::new();
        let wv = g.constant(&w);
        let xv = g.param(&x);
        let y = g.matmul(xv, wv).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(wv).item(), 0.0);
        assert_eq!(g.grad(xv).item(), 1.0);
    }
}
