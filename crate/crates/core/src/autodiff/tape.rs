//! Tape-based reverse-mode differentiation over rank-2 arrays.
//!
//! Every operation appends a node holding its forward value. `backward`
//! sweeps the tape in reverse accumulating vector-Jacobian products; `jvp`
//! sweeps forward pushing tangents, which the trust-region solver uses for
//! Fisher-vector products without second-order graphs.

use super::matrix::Matrix;
use super::special::{digamma, ln_gamma, sigmoid, softplus, trigamma};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Lgamma(NodeId),
    Digamma(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
    Embedding(NodeId, Vec<usize>),
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Per-node accumulated gradients (or tangents) from one sweep.
pub struct Gradients {
    slots: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }
}

/// Forward-mode tangents, same layout as [`Gradients`].
pub type Tangents = Gradients;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn accumulate(slot: &mut Option<Matrix>, delta: Matrix) {
    match slot {
        Some(m) => m.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        v.item().ok_or(AutodiffError::NotScalar { rows: v.rows(), cols: v.cols() })
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from gradient propagation.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn unary(&mut self, a: NodeId, value: Matrix, op: Op) -> NodeId {
        let ng = self.needs(&[a]);
        self.push(value, op, ng)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let v = va.matmul(vb);
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    /// Adds a 1×n row to every row of an m×n matrix (bias broadcast).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", va.shape(), vr.shape())));
        }
        let mut v = va.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_slice_mut(r).iter_mut().zip(vr.data()) {
                *x += b;
            }
        }
        let ng = self.needs(&[a, row]);
        Ok(self.push(v, Op::AddRow(a, row), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.unary(a, v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x + s);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.unary(a, v, Op::Exp(a))
    }

    fn check_positive(&self, op: &'static str, a: NodeId) -> Result<()> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain { op, value: bad });
        }
        Ok(())
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_positive("log", a)?;
        let v = self.value(a).map(f64::ln);
        Ok(self.unary(a, v, Op::Log(a)))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.unary(a, v, Op::Softplus(a))
    }

    pub fn lgamma(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_positive("lgamma", a)?;
        let v = self.value(a).map(ln_gamma);
        Ok(self.unary(a, v, Op::Lgamma(a)))
    }

    pub fn digamma(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_positive("digamma", a)?;
        let v = self.value(a).map(digamma);
        Ok(self.unary(a, v, Op::Digamma(a)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = row_softmax(self.value(a));
        self.unary(a, v, Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..v.rows() {
            let row = v.row_slice_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            for z in row.iter_mut() {
                *z -= lse;
            }
        }
        self.unary(a, v, Op::LogSoftmax(a))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat", "no inputs".into()));
        };
        let rows = self.value(first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(shape_err(
                "concat",
                format!("row count {} vs {}", rows, self.value(*bad).rows()),
            ));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let out = v.row_slice_mut(r);
            for p in parts {
                let src = self.nodes[p.0].value.row_slice(r);
                out[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(v, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start > end || end > va.cols() {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {} cols", va.cols())));
        }
        let mut v = Matrix::zeros(va.rows(), end - start);
        for r in 0..va.rows() {
            v.row_slice_mut(r).copy_from_slice(&va.row_slice(r)[start..end]);
        }
        Ok(self.unary(a, v, Op::SliceCols(a, start)))
    }

    /// Row `indices[i]` of `table` becomes output row `i`.
    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vt.rows()) {
            return Err(shape_err("embedding", format!("index {bad} >= vocab {}", vt.rows())));
        }
        let mut v = Matrix::zeros(indices.len(), vt.cols());
        for (r, &i) in indices.iter().enumerate() {
            v.row_slice_mut(r).copy_from_slice(vt.row_slice(i));
        }
        Ok(self.unary(table, v, Op::Embedding(table, indices.to_vec())))
    }

    /// Picks column `cols[i]` from row `i`, giving an m×1 column.
    pub fn gather(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        if cols.len() != va.rows() {
            return Err(shape_err("gather", format!("{} indices for {} rows", cols.len(), va.rows())));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= va.cols()) {
            return Err(shape_err("gather", format!("column {bad} >= {}", va.cols())));
        }
        let v = Matrix::column(&cols.iter().enumerate().map(|(r, &c)| va.get(r, c)).collect::<Vec<_>>());
        Ok(self.unary(a, v, Op::Gather(a, cols.to_vec())))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = Matrix::scalar(va.sum() / va.len().max(1) as f64);
        self.unary(a, v, Op::Mean(a))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = Matrix::column(&(0..va.rows()).map(|r| va.row_slice(r).iter().sum()).collect::<Vec<_>>());
        self.unary(a, v, Op::RowSum(a))
    }

    /// One long-short-term-memory step; weights are `[in, 4h]`, `[h, 4h]`, `[1, 4h]`
    /// with gate blocks ordered input, forget, cell, output.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        bias: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hidden = self.value(h).cols();
        if self.value(w_ih).cols() != 4 * hidden || self.value(c).shape() != self.value(h).shape() {
            return Err(shape_err(
                "lstm_cell",
                format!("hidden {hidden}, w_ih {:?}, c {:?}", self.value(w_ih).shape(), self.value(c).shape()),
            ));
        }
        let xi = self.matmul(x, w_ih)?;
        let hh = self.matmul(h, w_hh)?;
        let pre = self.add(xi, hh)?;
        let gates = self.add_row(pre, bias)?;
        let i_raw = self.slice_cols(gates, 0, hidden)?;
        let f_raw = self.slice_cols(gates, hidden, 2 * hidden)?;
        let g_raw = self.slice_cols(gates, 2 * hidden, 3 * hidden)?;
        let o_raw = self.slice_cols(gates, 3 * hidden, 4 * hidden)?;
        let i = self.sigmoid(i_raw);
        let f = self.sigmoid(f_raw);
        let g = self.tanh(g_raw);
        let o = self.sigmoid(o_raw);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_next = self.add(fc, ig)?;
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Gradients of a scalar node with respect to every node that feeds it.
    pub fn backward(&self, out: NodeId) -> Result<Gradients> {
        let v = self.value(out);
        if v.item().is_none() {
            return Err(AutodiffError::NotScalar { rows: v.rows(), cols: v.cols() });
        }
        self.vjp(out, Matrix::scalar(1.0))
    }

    /// Vector-Jacobian product seeded with `seed` at `out`.
    pub fn vjp(&self, out: NodeId, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != self.value(out).shape() {
            return Err(shape_err(
                "vjp",
                format!("seed {:?} for node {:?}", seed.shape(), self.value(out).shape()),
            ));
        }
        let mut slots: Vec<Option<Matrix>> = vec![None; out.0 + 1];
        slots[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else { continue };
            self.propagate(idx, &g, &mut slots);
            slots[idx] = Some(g);
        }
        Ok(Gradients { slots })
    }

    fn propagate(&self, idx: usize, g: &Matrix, slots: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].needs_grad;
        let mut send = |id: NodeId, m: Matrix| {
            if self.nodes[id.0].needs_grad {
                accumulate(&mut slots[id.0], m);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    send(*a, g.matmul_bt(val(*b)));
                }
                if wants(*b) {
                    send(*b, val(*a).matmul_at(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, r) => {
                send(*a, g.clone());
                if wants(*r) {
                    send(*r, column_sums(g));
                }
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                if wants(*b) {
                    send(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    send(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => send(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Relu(a) => send(*a, g.zip_map(val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
            Op::Sigmoid(a) => send(*a, g.zip_map(y, |gi, s| gi * s * (1.0 - s))),
            Op::Tanh(a) => send(*a, g.zip_map(y, |gi, t| gi * (1.0 - t * t))),
            Op::Exp(a) => send(*a, g.zip_map(y, |gi, e| gi * e)),
            Op::Log(a) => send(*a, g.zip_map(val(*a), |gi, x| gi / x)),
            Op::Softplus(a) => send(*a, g.zip_map(val(*a), |gi, x| gi * sigmoid(x))),
            Op::Lgamma(a) => send(*a, g.zip_map(val(*a), |gi, x| gi * digamma(x))),
            Op::Digamma(a) => send(*a, g.zip_map(val(*a), |gi, x| gi * trigamma(x))),
            Op::Softmax(a) => send(*a, softmax_jvp(y, g)),
            Op::LogSoftmax(a) => {
                let p = y.map(f64::exp);
                let mut d = g.clone();
                for r in 0..d.rows() {
                    let gs: f64 = g.row_slice(r).iter().sum();
                    for (di, pi) in d.row_slice_mut(r).iter_mut().zip(p.row_slice(r)) {
                        *di -= pi * gs;
                    }
                }
                send(*a, d);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if wants(*p) {
                        let mut d = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[off..off + w]);
                        }
                        send(*p, d);
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let va = val(*a);
                let mut d = Matrix::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    d.row_slice_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row_slice(r));
                }
                send(*a, d);
            }
            Op::Embedding(t, indices) => {
                let vt = val(*t);
                let mut d = Matrix::zeros(vt.rows(), vt.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (di, gi) in d.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *di += gi;
                    }
                }
                send(*t, d);
            }
            Op::Gather(a, cols) => {
                let va = val(*a);
                let mut d = Matrix::zeros(va.rows(), va.cols());
                for (r, &c) in cols.iter().enumerate() {
                    d.set(r, c, g.get(r, 0));
                }
                send(*a, d);
            }
            Op::Sum(a) => {
                let va = val(*a);
                send(*a, Matrix::filled(va.rows(), va.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let n = va.len().max(1) as f64;
                send(*a, Matrix::filled(va.rows(), va.cols(), g.data()[0] / n));
            }
            Op::RowSum(a) => {
                let va = val(*a);
                let mut d = Matrix::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let gr = g.get(r, 0);
                    d.row_slice_mut(r).iter_mut().for_each(|x| *x = gr);
                }
                send(*a, d);
            }
        }
    }

    /// Forward-mode sweep: pushes `seeds` (tangents at leaves) through the tape.
    pub fn jvp(&self, seeds: &[(NodeId, Matrix)]) -> Result<Tangents> {
        let mut slots: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        for (id, t) in seeds {
            if t.shape() != self.value(*id).shape() {
                return Err(shape_err("jvp", format!("tangent {:?} for {:?}", t.shape(), self.value(*id).shape())));
            }
            slots[id.0] = Some(t.clone());
        }
        for idx in 0..self.nodes.len() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let t = self.tangent_of(idx, &slots);
            slots[idx] = t;
        }
        Ok(Gradients { slots })
    }

    fn tangent_of(&self, idx: usize, slots: &[Option<Matrix>]) -> Option<Matrix> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let tan = |id: NodeId| slots[id.0].as_ref();
        let scale_by = |a: NodeId, f: &dyn Fn(f64, f64) -> f64| tan(a).map(|t| t.zip_map(val(a), f));
        match &node.op {
            Op::Leaf => None,
            Op::MatMul(a, b) => {
                let left = tan(*a).map(|ta| ta.matmul(val(*b)));
                let right = tan(*b).map(|tb| val(*a).matmul(tb));
                sum_opt(left, right)
            }
            Op::Add(a, b) => sum_opt(tan(*a).cloned(), tan(*b).cloned()),
            Op::AddRow(a, r) => {
                let rows = y.rows();
                let broadcast = tan(*r).map(|tr| {
                    let mut m = Matrix::zeros(rows, tr.cols());
                    for i in 0..rows {
                        m.row_slice_mut(i).copy_from_slice(tr.data());
                    }
                    m
                });
                sum_opt(tan(*a).cloned(), broadcast)
            }
            Op::Sub(a, b) => sum_opt(tan(*a).cloned(), tan(*b).map(|t| t.map(|x| -x))),
            Op::Mul(a, b) => {
                let left = tan(*a).map(|ta| ta.zip_map(val(*b), |x, y| x * y));
                let right = tan(*b).map(|tb| tb.zip_map(val(*a), |x, y| x * y));
                sum_opt(left, right)
            }
            Op::Scale(a, s) => tan(*a).map(|t| t.map(|x| x * s)),
            Op::AddScalar(a) => tan(*a).cloned(),
            Op::Relu(a) => scale_by(*a, &|t, x| if x > 0.0 { t } else { 0.0 }),
            Op::Sigmoid(a) => tan(*a).map(|t| t.zip_map(y, |ti, s| ti * s * (1.0 - s))),
            Op::Tanh(a) => tan(*a).map(|t| t.zip_map(y, |ti, th| ti * (1.0 - th * th))),
            Op::Exp(a) => tan(*a).map(|t| t.zip_map(y, |ti, e| ti * e)),
            Op::Log(a) => scale_by(*a, &|t, x| t / x),
            Op::Softplus(a) => scale_by(*a, &|t, x| t * sigmoid(x)),
            Op::Lgamma(a) => scale_by(*a, &|t, x| t * digamma(x)),
            Op::Digamma(a) => scale_by(*a, &|t, x| t * trigamma(x)),
            Op::Softmax(a) => tan(*a).map(|t| softmax_jvp(y, t)),
            Op::LogSoftmax(a) => tan(*a).map(|t| {
                let mut d = t.clone();
                for r in 0..d.rows() {
                    let dot: f64 = t.row_slice(r).iter().zip(y.row_slice(r)).map(|(ti, yi)| ti * yi.exp()).sum();
                    d.row_slice_mut(r).iter_mut().for_each(|x| *x -= dot);
                }
                d
            }),
            Op::Concat(parts) => {
                if parts.iter().all(|p| tan(*p).is_none()) {
                    return None;
                }
                let mut d = Matrix::zeros(y.rows(), y.cols());
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if let Some(tp) = tan(*p) {
                        for r in 0..y.rows() {
                            d.row_slice_mut(r)[off..off + w].copy_from_slice(tp.row_slice(r));
                        }
                    }
                    off += w;
                }
                Some(d)
            }
            Op::SliceCols(a, start) => tan(*a).map(|t| {
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    d.row_slice_mut(r).copy_from_slice(&t.row_slice(r)[*start..*start + y.cols()]);
                }
                d
            }),
            Op::Embedding(tb, indices) => tan(*tb).map(|t| {
                let mut d = Matrix::zeros(indices.len(), t.cols());
                for (r, &i) in indices.iter().enumerate() {
                    d.row_slice_mut(r).copy_from_slice(t.row_slice(i));
                }
                d
            }),
            Op::Gather(a, cols) => tan(*a).map(|t| {
                Matrix::column(&cols.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect::<Vec<_>>())
            }),
            Op::Sum(a) => tan(*a).map(|t| Matrix::scalar(t.sum())),
            Op::Mean(a) => tan(*a).map(|t| Matrix::scalar(t.sum() / t.len().max(1) as f64)),
            Op::RowSum(a) => tan(*a).map(|t| {
                Matrix::column(&(0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect::<Vec<_>>())
            }),
        }
    }
}

fn sum_opt(a: Option<Matrix>, b: Option<Matrix>) -> Option<Matrix> {
    match (a, b) {
        (Some(mut x), Some(y)) => {
            x.add_assign(&y);
            Some(x)
        }
        (x, None) => x,
        (None, y) => y,
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row_slice(r)) {
            *o += x;
        }
    }
    out
}

/// Softmax Jacobian applied to `t` (the Jacobian is symmetric, so this serves both sweeps).
fn softmax_jvp(p: &Matrix, t: &Matrix) -> Matrix {
    let mut d = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let pr = p.row_slice(r);
        let tr = t.row_slice(r);
        let dot: f64 = pr.iter().zip(tr).map(|(a, b)| a * b).sum();
        for ((di, pi), ti) in d.row_slice_mut(r).iter_mut().zip(pr).zip(tr) {
            *di = pi * (ti - dot);
        }
    }
    d
}

fn row_softmax(x: &Matrix) -> Matrix {
    let mut v = x.clone();
    for r in 0..v.rows() {
        let row = v.row_slice_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for z in row.iter_mut() {
            *z = (*z - max).exp();
            total += *z;
        }
        for z in row.iter_mut() {
            *z /= total;
        }
    }
    v
}
