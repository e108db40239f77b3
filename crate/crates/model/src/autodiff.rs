//! Reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! A [`Graph`] records one forward pass. Parameters live in a
//! [`ParamStore`] that the graph borrows, so building a graph never copies
//! weights; `backward` adds parameter gradients into a [`GradStore`].

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    /// Whether decoupled weight decay applies (weights yes; biases and
    /// layer-norm parameters no).
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat, decay: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// One gradient array per parameter, same shapes as the store.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub grads: Vec<Mat>,
}

impl GradStore {
    pub fn new(store: &ParamStore) -> GradStore {
        GradStore { grads: store.params.iter().map(|p| Mat::zeros(p.value.raw_dim())).collect() }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * factor);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    /// m×n plus a 1×n row broadcast over rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Array1<f64> },
    Gather { table: Var, ids: Vec<usize> },
    SelectRows { x: Var, rows: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows { x: Var, start: usize, end: usize },
    MaxRows { x: Var, argmax: Vec<usize> },
    BceLogits { logits: Var, targets: Mat, weights: Option<Mat>, denom: f64 },
    Bce { probs: Var, targets: Mat, weights: Option<Mat>, denom: f64, eps: f64 },
    SoftmaxCe { logits: Var, targets: Vec<Option<usize>>, weights: Option<Vec<f64>>, probs: Mat, denom: f64 },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Records a forward pass for later differentiation.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Graph<'s> {
        Graph { store, nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + r;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mean = xv.mean_axis(Axis(1)).unwrap();
        let mut xhat = xv - &mean.view().insert_axis(Axis(1));
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        xhat *= &inv_std.view().insert_axis(Axis(1));
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros((ids.len(), t.ncols()));
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(i));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros((rows.len(), xv.ncols()));
        for (r, &i) in rows.iter().enumerate() {
            out.row_mut(r).assign(&xv.row(i));
        }
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Mean of rows `start..end` as a 1×n row.
    pub fn mean_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        assert!(start < end, "mean over an empty row range");
        let v = self.value(x).slice(s![start..end, ..]).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        self.push(v, Op::MeanRows { x, start, end })
    }

    /// Row `rows[j]` of column `j` for each column, as a 1×n row: a
    /// column-wise maximum whose winners are already known.
    pub fn pick_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(rows.len(), xv.ncols(), "one row per column");
        let out = Mat::from_shape_fn((1, xv.ncols()), |(_, j)| xv[[rows[j], j]]);
        self.push(out, Op::MaxRows { x, argmax: rows.to_vec() })
    }

    /// Column-wise maximum over rows as a 1×n row; ties go to the first row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut argmax = vec![0usize; xv.ncols()];
        let mut out = Mat::zeros((1, xv.ncols()));
        for (j, col) in xv.columns().into_iter().enumerate() {
            let mut best = 0;
            for (i, v) in col.iter().enumerate() {
                if *v > col[best] {
                    best = i;
                }
            }
            argmax[j] = best;
            out[[0, j]] = col[best];
        }
        self.push(out, Op::MaxRows { x, argmax })
    }

    /// Σ w·(softplus(z) − y·z) / denom over all entries.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Mat, weights: Option<Mat>, denom: f64) -> Var {
        let z = self.value(logits);
        let mut total = 0.0;
        Zip::indexed(z).for_each(|idx, &zv| {
            let w = weights.as_ref().map_or(1.0, |w| w[idx]);
            total += w * (softplus(zv) - targets[idx] * zv);
        });
        let v = Mat::from_elem((1, 1), total / denom);
        self.push(v, Op::BceLogits { logits, targets, weights, denom })
    }

    /// Binary cross-entropy on probabilities clamped to [eps, 1 − eps].
    pub fn bce(&mut self, probs: Var, targets: Mat, weights: Option<Mat>, denom: f64, eps: f64) -> Var {
        let p = self.value(probs);
        let mut total = 0.0;
        Zip::indexed(p).for_each(|idx, &pv| {
            let pc = pv.clamp(eps, 1.0 - eps);
            let y = targets[idx];
            let w = weights.as_ref().map_or(1.0, |w| w[idx]);
            total -= w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
        });
        let v = Mat::from_elem((1, 1), total / denom);
        self.push(v, Op::Bce { probs, targets, weights, denom, eps })
    }

    /// Row-wise softmax cross-entropy; rows with no target are ignored.
    /// The mean is taken over the summed weights of the counted rows.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[Option<usize>], weights: Option<Vec<f64>>) -> Var {
        let probs = softmax_rows(self.value(logits));
        let mut total = 0.0;
        let mut denom = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let w = weights.as_ref().map_or(1.0, |w| w[t]);
                total -= w * probs[[i, t]].max(f64::MIN_POSITIVE).ln();
                denom += w;
            }
        }
        let denom = if denom > 0.0 { denom } else { 1.0 };
        let v = Mat::from_elem((1, 1), total / denom);
        self.push(v, Op::SoftmaxCe { logits, targets: targets.to_vec(), weights, probs, denom })
    }

    /// Σ c_i · x_i over 1×1 scalars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|(v, c)| c * self.scalar(*v)).sum();
        self.push(Mat::from_elem((1, 1), total), Op::WeightedSum(terms.to_vec()))
    }

    /// Back-propagates from the scalar `loss`, adding `scale ×` parameter
    /// gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut GradStore, scale: f64) {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Mat::from_elem((1, 1), scale));
        fn acc(g: &mut [Option<Mat>], v: Var, d: Mat) {
            match &mut g[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        }
        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => grads.grads[id.0] += &dy,
                Op::MatMul(a, b) => {
                    let da = dy.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&dy);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.dot(self.value(*b));
                    let db = dy.t().dot(self.value(*a));
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, dy.clone());
                    acc(&mut g, *a, dy);
                }
                Op::AddRow(a, row) => {
                    acc(&mut g, *row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *a, dy);
                }
                Op::Mul(a, b) => {
                    let da = &dy * self.value(*b);
                    let db = &dy * self.value(*a);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Scale(a, c) => acc(&mut g, *a, dy * *c),
                Op::MulConst(a, c) => acc(&mut g, *a, dy * c),
                Op::Gelu(a) => {
                    let mut d = self.value(*a).mapv(gelu_grad);
                    d *= &dy;
                    acc(&mut g, *a, d);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut d = &dy * y;
                    let sums = d.sum_axis(Axis(1));
                    d -= &(y * &sums.insert_axis(Axis(1)));
                    acc(&mut g, *a, d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let n = xhat.ncols() as f64;
                    acc(&mut g, *gamma, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *beta, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &dy * self.value(*gamma);
                    let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let mut dx = dxhat * n - &sum_d - &(xhat * &sum_dx);
                    dx *= &(inv_std / n).insert_axis(Axis(1));
                    acc(&mut g, *x, dx);
                }
                Op::Gather { table, ids } => {
                    if let Op::Param(id) = self.nodes[table.0].op {
                        // Sparse update straight into the parameter gradient.
                        let target = &mut grads.grads[id.0];
                        for (r, &row) in ids.iter().enumerate() {
                            let mut dst = target.row_mut(row);
                            dst += &dy.row(r);
                        }
                    } else {
                        let mut d = Mat::zeros(self.value(*table).raw_dim());
                        for (r, &row) in ids.iter().enumerate() {
                            let mut dst = d.row_mut(row);
                            dst += &dy.row(r);
                        }
                        acc(&mut g, *table, d);
                    }
                }
                Op::SelectRows { x, rows } => {
                    let mut d = Mat::zeros(self.value(*x).raw_dim());
                    for (r, &row) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(row);
                        dst += &dy.row(r);
                    }
                    acc(&mut g, *x, d);
                }
                Op::SliceCols { x, start } => {
                    let mut d = Mat::zeros(self.value(*x).raw_dim());
                    d.slice_mut(s![.., *start..*start + dy.ncols()]).assign(&dy);
                    acc(&mut g, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut g, *p, dy.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut g, *p, dy.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::MeanRows { x, start, end } => {
                    let mut d = Mat::zeros(self.value(*x).raw_dim());
                    let share = &dy.row(0) / (*end - *start) as f64;
                    for r in *start..*end {
                        d.row_mut(r).assign(&share);
                    }
                    acc(&mut g, *x, d);
                }
                Op::MaxRows { x, argmax } => {
                    let mut d = Mat::zeros(self.value(*x).raw_dim());
                    for (j, &r) in argmax.iter().enumerate() {
                        d[[r, j]] = dy[[0, j]];
                    }
                    acc(&mut g, *x, d);
                }
                Op::BceLogits { logits, targets, weights, denom } => {
                    let up = dy[[0, 0]] / denom;
                    let mut d = self.value(*logits).mapv(sigmoid) - targets;
                    if let Some(w) = weights {
                        d *= w;
                    }
                    acc(&mut g, *logits, d * up);
                }
                Op::Bce { probs, targets, weights, denom, eps } => {
                    let up = dy[[0, 0]] / denom;
                    let p = self.value(*probs);
                    let mut d = Mat::zeros(p.raw_dim());
                    Zip::indexed(&mut d).and(p).for_each(|idx, dv, &pv| {
                        if pv > *eps && pv < 1.0 - *eps {
                            let y = targets[idx];
                            let w = weights.as_ref().map_or(1.0, |w| w[idx]);
                            *dv = w * (-y / pv + (1.0 - y) / (1.0 - pv)) * up;
                        }
                    });
                    acc(&mut g, *probs, d);
                }
                Op::SoftmaxCe { logits, targets, weights, probs, denom } => {
                    let up = dy[[0, 0]] / denom;
                    let mut d = Mat::zeros(probs.raw_dim());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let w = weights.as_ref().map_or(1.0, |w| w[t]);
                            let mut row = d.row_mut(r);
                            row.assign(&probs.row(r));
                            row[t] -= 1.0;
                            row *= w * up;
                        }
                    }
                    acc(&mut g, *logits, d);
                }
                Op::WeightedSum(terms) => {
                    for (v, c) in terms {
                        acc(&mut g, *v, &dy * *c);
                    }
                }
            }
        }
    }
}
