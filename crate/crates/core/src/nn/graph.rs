//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! the information its backward rule needs. Parameters are referenced from a
//! borrowed [`ParamStore`] and never copied onto the tape.

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    MulConst(Var, Array2<f64>),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Array2<f64>,
        count: usize,
    },
    WeightedSum(Vec<(Var, f64)>),
    Detach,
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Parameter gradients produced by [`Graph::backward`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(Array2::zeros((0, 0)), Op::Param(id), true);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row: bias must be a single row");
        let value = self.value(x) + self.value(row);
        let rg = self.rg(x) || self.rg(row);
        self.push(value, Op::AddRow(x, row), rg)
    }

    pub fn add_const(&mut self, x: Var, c: &Array2<f64>) -> Var {
        let value = self.value(x) + c;
        let rg = self.rg(x);
        self.push(value, Op::AddConst(x), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x) * s;
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Array2<f64>) -> Var {
        let value = self.value(x) * &c;
        let rg = self.rg(x);
        self.push(value, Op::MulConst(x, c), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                xhat[[r, c]] = (row[c] - mean) * is;
            }
        }
        let value = &xhat * self.value(gain) + self.value(bias);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: height mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(x);
        self.push(value, Op::SliceRows(x, start), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(x);
        self.push(value, Op::SliceCols(x, start), rg)
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).assign(&t.row(id));
        }
        let rg = self.rg(table);
        self.push(value, Op::Gather(table, ids.to_vec()), rg)
    }

    /// Mean softmax cross-entropy over the rows whose target is `Some`.
    /// Returns a `1 × 1` node; zero when no row carries a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy: one target per row");
        let probs = softmax_rows(lv);
        let mut total = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = lv.row(r);
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        )
    }

    /// `Σ wᵢ·xᵢ` over `1 × 1` scalars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|&(x, w)| w * self.scalar(x)).sum();
        let rg = terms.iter().any(|&(x, _)| self.rg(x));
        self.push(Array2::from_elem((1, 1), v), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Detach, false)
    }

    /// Backpropagates from a `1 × 1` root and returns gradients for every
    /// parameter in the store (zeros for parameters not on the tape).
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant | Op::Detach => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        let ga = g.dot(self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = g.t().dot(self.value(*a));
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.rg(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::AddConst(x) => accumulate(&mut grads, *x, g),
                Op::Scale(x, s) => accumulate(&mut grads, *x, g * *s),
                Op::MulConst(x, c) => accumulate(&mut grads, *x, g * c),
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    ndarray::Zip::from(&mut gx).and(xv).for_each(|gv, &v| {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if self.rg(*gain) {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *gain, gg);
                    }
                    if self.rg(*bias) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.rg(*x) {
                        let dxhat = &g * self.value(*gain);
                        let (rows, cols) = dxhat.dim();
                        let n = cols as f64;
                        let mut gx = Array2::zeros((rows, cols));
                        for r in 0..rows {
                            let d = dxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_d: f64 = d.sum();
                            let sum_dx: f64 = d.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
                            for c in 0..cols {
                                gx[[r, c]] =
                                    inv_std[r] / n * (n * d[c] - sum_d - xh[c] * sum_dx);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut gx = &g * y;
                    for (mut row, yrow) in gx.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                        let dot: f64 = row.sum();
                        row.zip_mut_with(&yrow, |gv, &yv| *gv -= yv * dot);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.shape(p).0;
                        if self.rg(p) {
                            let gp = g.slice(s![start..start + rows, ..]).to_owned();
                            accumulate(&mut grads, p, gp);
                        }
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = self.shape(p).1;
                        if self.rg(p) {
                            let gp = g.slice(s![.., start..start + cols]).to_owned();
                            accumulate(&mut grads, p, gp);
                        }
                        start += cols;
                    }
                }
                Op::SliceRows(x, start) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Array2::zeros(self.shape(*x));
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(self.shape(*table));
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    if *count > 0 {
                        let scale = g[[0, 0]] / *count as f64;
                        let mut gl = Array2::zeros(probs.dim());
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(t) = *t {
                                let mut row = gl.row_mut(r);
                                row.assign(&probs.row(r));
                                row[t] -= 1.0;
                                row *= scale;
                            }
                        }
                        accumulate(&mut grads, *logits, gl);
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(x, w) in terms {
                        if self.rg(x) {
                            accumulate(&mut grads, x, Array2::from_elem((1, 1), g[[0, 0]] * w));
                        }
                    }
                }
            }
        }

        let mut out = Gradients::zeros_like(self.store);
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = grads[v.0].take() {
                    out.grads[pid] = g;
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.iter().map(|(_, v)| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.index()]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.grads.iter_mut()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            *g *= s;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}
