//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its output value and
//! the handles of its inputs. Nodes are appended in evaluation order, so the
//! tape is always topologically sorted and [`Tape::backward`] is a single
//! reverse sweep that visits each node once.
//!
//! Leaves are either parameters (`requires_grad`) or constants. Constants are
//! the stop-gradient mechanism: frozen global features, prototypes and
//! eigenvectors enter the tape through [`Tape::constant`] and never receive
//! gradient.

use crate::error::{Error, Result};
use crate::tensor::matrix::{dot, DenseMatrix};

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBroadcast(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    KlRows(Var, Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        mask: Vec<usize>,
        probs: DenseMatrix,
    },
    CosineSimRows {
        a: Var,
        unit_b: DenseMatrix,
        a_norms: Vec<f64>,
    },
    SumAll(Var),
    SumSquares(Var),
    ConcatCols(Vec<Var>),
    Column(Var, usize),
    ScaleRows(Var, Var),
    SelectRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

/// Single-owner computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseMatrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
    }
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

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Frozen leaf; no gradient flows into it.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Stop-gradient copy of an existing value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg, "scale")
    }

    /// Adds a 1×k row to every row of an n×k matrix.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(shape_err("add_row_broadcast", xv, rv));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(value, Op::AddRowBroadcast(x, row), rg, "add_row_broadcast")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg, "relu")
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows_value(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg, "softmax_rows")
    }

    /// Mean over rows of `KL(p_row ‖ q_row)`.
    pub fn kl_rows(&mut self, p: Var, q: Var) -> Result<Var> {
        let (pv, qv) = (self.value(p), self.value(q));
        if pv.shape() != qv.shape() {
            return Err(shape_err("kl_rows", pv, qv));
        }
        let value = kl_rows_value(pv, qv);
        let rg = self.rg(p) || self.rg(q);
        self.push(DenseMatrix::scalar(value), Op::KlRows(p, q), rg, "kl_rows")
    }

    /// Mean squared elementwise difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mse", av, bv));
        }
        let n = av.len().max(1) as f64;
        let value = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let rg = self.rg(a) || self.rg(b);
        self.push(DenseMatrix::scalar(value), Op::Mse(a, b), rg, "mse")
    }

    /// Mean negative log-softmax of the true class over `mask` rows.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if mask.is_empty() {
            return Err(Error::invalid("cross_entropy: empty mask"));
        }
        if labels.len() != mask.len() {
            return Err(Error::invalid("cross_entropy: labels and mask lengths differ"));
        }
        let classes = lv.cols();
        let mut probs = DenseMatrix::zeros(mask.len(), classes);
        let mut total = 0.0;
        for (k, (&row, &label)) in mask.iter().zip(labels).enumerate() {
            if row >= lv.rows() {
                return Err(Error::invalid(format!("cross_entropy: row {row} out of range")));
            }
            if label >= classes {
                return Err(Error::invalid(format!(
                    "cross_entropy: label {label} out of range for {classes} classes"
                )));
            }
            let r = lv.row(row);
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = r.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + denom.ln();
            total += log_z - r[label];
            for (j, &x) in r.iter().enumerate() {
                probs.set(k, j, (x - max).exp() / denom);
            }
        }
        let value = total / mask.len() as f64;
        let rg = self.rg(logits);
        self.push(
            DenseMatrix::scalar(value),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Cosine similarity of every row of `a` with every row of the constant
    /// `b`. Zero-norm rows on either side give similarity 0.
    pub fn cosine_sim_rows(&mut self, a: Var, b: &DenseMatrix) -> Result<Var> {
        let av = self.value(a);
        if av.cols() != b.cols() {
            return Err(shape_err("cosine_sim_rows", av, b));
        }
        let unit_b = unit_rows(b);
        let a_norms: Vec<f64> = (0..av.rows()).map(|i| dot(av.row(i), av.row(i)).sqrt()).collect();
        let value = cosine_with_unit(av, &unit_b, &a_norms)?;
        let rg = self.rg(a);
        self.push(value, Op::CosineSimRows { a, unit_b, a_norms }, rg, "cosine_sim_rows")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let value = DenseMatrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg, "sum_all")
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).as_slice().iter().map(|x| x * x).sum();
        let rg = self.rg(a);
        self.push(DenseMatrix::scalar(s), Op::SumSquares(a), rg, "sum_squares")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_cols: no inputs"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), v));
            }
            cols += v.cols();
        }
        let mut value = DenseMatrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for i in 0..rows {
                value.row_mut(i)[offset..offset + v.cols()].copy_from_slice(v.row(i));
            }
            offset += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    /// Column `j` as an n×1 matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let av = self.value(a);
        if j >= av.cols() {
            return Err(Error::invalid(format!("column {j} out of range for {} cols", av.cols())));
        }
        let value = DenseMatrix::column_vector(&av.column(j));
        let rg = self.rg(a);
        self.push(value, Op::Column(a, j), rg, "column")
    }

    /// Multiplies row `i` of `x` by `s[i]`, where `s` is n×1.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.cols() != 1 || sv.rows() != xv.rows() {
            return Err(shape_err("scale_rows", xv, sv));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            let f = sv.get(i, 0);
            value.row_mut(i).iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(x) || self.rg(s);
        self.push(value, Op::ScaleRows(x, s), rg, "scale_rows")
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::invalid(format!("select_rows: row {bad} out of range")));
        }
        let value = av.select_rows(idx);
        let rg = self.rg(a);
        self.push(value, Op::SelectRows(a, idx.to_vec()), rg, "select_rows")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward requires a scalar root, got {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(DenseMatrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let mut acc = |v: Var, delta: DenseMatrix| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?)?;
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.hadamard(self.value(*b))?)?;
                }
                if self.rg(*b) {
                    acc(*b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s))?,
            Op::AddRowBroadcast(x, row) => {
                acc(*x, g.clone())?;
                if self.rg(*row) {
                    let mut col_sums = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in col_sums.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*row, col_sums)?;
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(&node.value, "relu backward", |gv, y| if y > 0.0 { gv } else { 0.0 })?;
                acc(*a, d)?;
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let inner = dot(g.row(i), y.row(i));
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = y.get(i, j) * (g.get(i, j) - inner);
                    }
                }
                acc(*a, d)?;
            }
            Op::KlRows(p, q) => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                let upstream = g.as_slice()[0] / pv.rows().max(1) as f64;
                if self.rg(*p) {
                    let d = pv.zip_map(qv, "kl backward", |pj, qj| {
                        let dlog = if pj > LOG_EPS { 1.0 } else { 0.0 };
                        upstream * (pj.max(LOG_EPS).ln() - qj.max(LOG_EPS).ln() + dlog)
                    })?;
                    acc(*p, d)?;
                }
                if self.rg(*q) {
                    let d = pv.zip_map(qv, "kl backward", |pj, qj| {
                        if qj > LOG_EPS {
                            -upstream * pj / qj
                        } else {
                            0.0
                        }
                    })?;
                    acc(*q, d)?;
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let f = 2.0 * g.as_slice()[0] / av.len().max(1) as f64;
                let diff = av.sub(bv)?.scale(f);
                if self.rg(*b) {
                    acc(*b, diff.scale(-1.0))?;
                }
                acc(*a, diff)?;
            }
            Op::CrossEntropy {
                logits,
                labels,
                mask,
                probs,
            } => {
                let lv = self.value(*logits);
                let f = g.as_slice()[0] / mask.len() as f64;
                let mut d = DenseMatrix::zeros(lv.rows(), lv.cols());
                for (k, (&row, &label)) in mask.iter().zip(labels).enumerate() {
                    for j in 0..lv.cols() {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        d.add_at(row, j, f * (probs.get(k, j) - onehot));
                    }
                }
                acc(*logits, d)?;
            }
            Op::CosineSimRows { a, unit_b, a_norms } => {
                let av = self.value(*a);
                let out = &node.value;
                let mut d = DenseMatrix::zeros(av.rows(), av.cols());
                for (i, &n) in a_norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    // d cos_ij / d a_i = b̂_j / n - cos_ij · a_i / n²
                    let mut radial = 0.0;
                    let drow = d.row_mut(i);
                    for j in 0..unit_b.rows() {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        radial += gij * out.get(i, j);
                        for (o, &b) in drow.iter_mut().zip(unit_b.row(j)) {
                            *o += gij * b / n;
                        }
                    }
                    for (o, &x) in drow.iter_mut().zip(av.row(i)) {
                        *o -= radial * x / (n * n);
                    }
                }
                acc(*a, d)?;
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                acc(*a, DenseMatrix::filled(av.rows(), av.cols(), g.as_slice()[0]))?;
            }
            Op::SumSquares(a) => {
                acc(*a, self.value(*a).scale(2.0 * g.as_slice()[0]))?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.rg(p) {
                        let d = DenseMatrix::from_fn(g.rows(), cols, |i, j| g.get(i, offset + j));
                        acc(p, d)?;
                    }
                    offset += cols;
                }
            }
            Op::Column(a, j) => {
                let av = self.value(*a);
                let mut d = DenseMatrix::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    d.set(i, *j, g.get(i, 0));
                }
                acc(*a, d)?;
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                if self.rg(*x) {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let f = sv.get(i, 0);
                        d.row_mut(i).iter_mut().for_each(|v| *v *= f);
                    }
                    acc(*x, d)?;
                }
                if self.rg(*s) {
                    let d = DenseMatrix::from_fn(xv.rows(), 1, |i, _| dot(g.row(i), xv.row(i)));
                    acc(*s, d)?;
                }
            }
            Op::SelectRows(a, idx) => {
                let av = self.value(*a);
                let mut d = DenseMatrix::zeros(av.rows(), av.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, d)?;
            }
        }
        Ok(())
    }
}

pub fn softmax_rows_value(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

pub fn kl_rows_value(p: &DenseMatrix, q: &DenseMatrix) -> f64 {
    let rows = p.rows().max(1) as f64;
    let total: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(&pj, &qj)| pj * (pj.max(LOG_EPS).ln() - qj.max(LOG_EPS).ln()))
        .sum();
    total / rows
}

fn cosine_with_unit(a: &DenseMatrix, unit_b: &DenseMatrix, a_norms: &[f64]) -> Result<DenseMatrix> {
    let mut value = a.matmul_t(unit_b)?;
    for (i, &n) in a_norms.iter().enumerate() {
        let row = value.row_mut(i);
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        } else {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(value)
}

/// Value-only form of [`Tape::cosine_sim_rows`], bitwise identical to it.
pub fn cosine_sim_value(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(shape_err("cosine_sim_value", a, b));
    }
    let a_norms: Vec<f64> = (0..a.rows()).map(|i| dot(a.row(i), a.row(i)).sqrt()).collect();
    cosine_with_unit(a, &unit_rows(b), &a_norms)
}

/// Rows scaled to unit norm; zero rows stay zero.
pub fn unit_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = dot(row, row).sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}
