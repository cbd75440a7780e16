use std::rc::Rc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        probs: Matrix,
        labels: Rc<Vec<usize>>,
        rows: Rc<Vec<usize>>,
    },
    Sum(Var),
    Transpose(Var),
    ConcatCols(Var, Var),
    SelectRows(Var, Rc<Vec<usize>>),
    Standardize {
        x: Var,
        centered: Matrix,
        std: Vec<f64>,
        eps: f64,
    },
    CosineSim {
        a: Var,
        b: Var,
        norm_a: Vec<f64>,
        norm_b: Vec<f64>,
        eps: f64,
    },
    RowNormalize {
        x: Var,
        sums: Vec<f64>,
    },
    SymNormalize {
        x: Var,
        inv_sqrt: Vec<f64>,
    },
    Ste(Var),
    Scatter {
        v: Var,
        at: Rc<Vec<(usize, usize, usize)>>,
    },
    TypeReweight {
        r: Var,
        adj: Rc<Matrix>,
        types: Rc<Vec<usize>>,
    },
    RelationalPpr(Box<PprCache>),
}

/// Forward intermediates of [`Tape::relational_ppr`].
#[derive(Debug, Clone)]
struct PprCache {
    r: Var,
    p: Var,
    types: Rc<Vec<usize>>,
    /// Nonzero adjacency entries `(i, j, a_ij)`.
    edges: Vec<(usize, usize, f64)>,
    /// Reweighted entries `x_ij = a_ij r[t_i, t_j]`, aligned with `edges`.
    x: Vec<f64>,
    inv_sqrt: Vec<f64>,
    alpha: f64,
    /// `T_k = α^k Â^k P` for every computed term.
    terms: Vec<Matrix>,
}

impl PprCache {
    /// Entries of `Â`: the edges followed by the self-loops.
    fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let s = &self.inv_sqrt;
        let off = self.edges.iter().zip(&self.x).map(move |(&(i, j, _), &x)| (i, j, s[i] * x * s[j]));
        let diag = (0..s.len()).map(move |i| (i, i, s[i] * s[i]));
        off.chain(diag)
    }
}

fn sparse_mul(entries: &[(usize, usize, f64)], m: &Matrix, transpose: bool) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for &(i, j, v) in entries {
        let (dst, src) = if transpose { (j, i) } else { (i, j) };
        for c in 0..m.ncols() {
            out[(dst, c)] += v * m[(src, c)];
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Record of dense matrix operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every operation's inputs
/// precede it and [`Tape::backward`] can walk the record in exact reverse.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tape node that required one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g),
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that gradients flow into.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err("matmul", va, vb));
        }
        let out = va * vb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(op, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.value(a).component_mul(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Hadamard(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    fn row_broadcast_check(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(shape_err(op, va, vr));
        }
        Ok(())
    }

    /// `a + 1·row`, broadcasting a `1 × m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast_check("add_row", a, row)?;
        let r = self.value(row).clone();
        let mut out = self.value(a).clone();
        for mut x in out.row_iter_mut() {
            x += &r;
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Entrywise `a ⊙ 1·row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast_check("mul_row", a, row)?;
        let r = self.value(row).clone();
        let mut out = self.value(a).clone();
        for mut x in out.row_iter_mut() {
            x.component_mul_assign(&r);
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::MulRow(a, row), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Mean negative log-likelihood over the rows selected by `mask`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
        let x = self.value(logits);
        if labels.len() != x.nrows() || mask.len() != x.nrows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: x.shape(),
                rhs: (labels.len(), mask.len()),
            });
        }
        let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return Err(Error::EmptyMask("cross_entropy"));
        }
        let probs = softmax_rows(x);
        let mut nll = 0.0;
        for &i in &rows {
            let row = x.row(i);
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            nll += lse - x[(i, labels[i])];
        }
        let loss = Matrix::from_element(1, 1, nll / rows.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                probs,
                labels: Rc::new(labels.to_vec()),
                rows: Rc::new(rows),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_element(1, 1, self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    /// `[a, b]` side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(shape_err("concat_cols", va, vb));
        }
        let (p, q) = (va.ncols(), vb.ncols());
        let out = Matrix::from_fn(va.nrows(), p + q, |i, j| {
            if j < p {
                va[(i, j)]
            } else {
                vb[(i, j - p)]
            }
        });
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let va = self.value(a);
        let out = Matrix::from_fn(rows.len(), va.ncols(), |i, j| va[(rows[i], j)]);
        let rg = self.rg(&[a]);
        self.push(out, Op::SelectRows(a, Rc::new(rows.to_vec())), rg)
    }

    /// Per-column standardization: `(x − mean) / (std + eps)`, population std.
    pub fn standardize(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let mut centered = x.clone();
        let mut std = Vec::with_capacity(x.ncols());
        for mut col in centered.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            std.push((col.norm_squared() / n).sqrt());
        }
        let mut out = centered.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col /= std[j] + eps;
        }
        let rg = self.rg(&[a]);
        self.push(
            out,
            Op::Standardize {
                x: a,
                centered,
                std,
                eps,
            },
            rg,
        )
    }

    /// Row-pair cosine similarity `⟨a_u, b_v⟩ / max(‖a_u‖‖b_v‖, eps)`.
    pub fn cosine_sim(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(shape_err("cosine_sim", va, vb));
        }
        let norm_a: Vec<f64> = va.row_iter().map(|r| r.norm()).collect();
        let norm_b: Vec<f64> = vb.row_iter().map(|r| r.norm()).collect();
        let mut out = va * vb.transpose();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] /= (norm_a[i] * norm_b[j]).max(eps);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            out,
            Op::CosineSim {
                a,
                b,
                norm_a,
                norm_b,
                eps,
            },
            rg,
        ))
    }

    /// Divides each row by the sum of its absolute values. Rows summing to
    /// zero become zero rows, or (with `identity_fallback`, square inputs
    /// only) the matching identity row.
    pub fn row_normalize(&mut self, a: Var, identity_fallback: bool) -> Var {
        let x = self.value(a);
        let sums: Vec<f64> = x.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect();
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            if sums[i] > 0.0 {
                row /= sums[i];
            } else if identity_fallback && i < row.len() {
                row[i] = 1.0;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::RowNormalize { x: a, sums }, rg)
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
    /// Nodes with nonpositive degree are treated as isolated.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if !x.is_square() {
            return Err(shape_err("sym_normalize", x, &x.transpose()));
        }
        let n = x.nrows();
        let inv_sqrt: Vec<f64> = x
            .row_iter()
            .map(|r| {
                let d = r.sum() + 1.0;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let out = Matrix::from_fn(n, n, |i, j| {
            let m = x[(i, j)] + if i == j { 1.0 } else { 0.0 };
            inv_sqrt[i] * m * inv_sqrt[j]
        });
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SymNormalize { x: a, inv_sqrt }, rg))
    }

    /// Heaviside `1(y > threshold)` in the forward pass; the backward pass
    /// hands the incoming gradient to `y` unchanged (straight-through).
    pub fn straight_through_threshold(&mut self, y: Var, threshold: f64) -> Var {
        let out = self.value(y).map(|v| if v > threshold { 1.0 } else { 0.0 });
        let rg = self.rg(&[y]);
        self.push(out, Op::Ste(y), rg)
    }

    /// Scatters entries of a column vector into a zero `rows × cols` matrix:
    /// `out[(i, j)] += v[k]` for every `(k, i, j)` in `at`.
    pub fn scatter(&mut self, v: Var, at: Rc<Vec<(usize, usize, usize)>>, rows: usize, cols: usize) -> Result<Var> {
        let vv = self.value(v);
        if vv.ncols() != 1 || at.iter().any(|&(k, i, j)| k >= vv.nrows() || i >= rows || j >= cols) {
            return Err(Error::Shape {
                op: "scatter",
                lhs: vv.shape(),
                rhs: (rows, cols),
            });
        }
        let mut out = Matrix::zeros(rows, cols);
        for &(k, i, j) in at.iter() {
            out[(i, j)] += vv[(k, 0)];
        }
        let rg = self.rg(&[v]);
        Ok(self.push(out, Op::Scatter { v, at }, rg))
    }

    /// `out_ij = adj_ij · r[types_i, types_j]`.
    pub fn type_reweight(&mut self, r: Var, adj: Rc<Matrix>, types: Rc<Vec<usize>>) -> Result<Var> {
        let vr = self.value(r);
        let t = types.iter().copied().max().map_or(0, |m| m + 1);
        if !adj.is_square() || adj.nrows() != types.len() || vr.nrows() < t || vr.ncols() < t {
            return Err(shape_err("type_reweight", vr, &adj));
        }
        let out = Matrix::from_fn(adj.nrows(), adj.ncols(), |i, j| {
            adj[(i, j)] * vr[(types[i], types[j])]
        });
        let rg = self.rg(&[r]);
        Ok(self.push(out, Op::TypeReweight { r, adj, types }, rg))
    }

    /// Truncated personalized-PageRank propagation over a type-reweighted
    /// graph, fused into one sparse operation:
    ///
    /// `Ā = adj ⊙ r[types, types]`, `Â = D^{-1/2}(Ā + I)D^{-1/2}`,
    /// `out = Σ_{k=0}^{K} α^k Â^k p`,
    ///
    /// stopping once the Frobenius norm of the latest term drops below `tol`
    /// or after `k_iter` products. Gradients flow to `r` and `p`.
    #[allow(clippy::too_many_arguments)]
    pub fn relational_ppr(
        &mut self,
        r: Var,
        adj: &Matrix,
        types: Rc<Vec<usize>>,
        p: Var,
        alpha: f64,
        k_iter: usize,
        tol: f64,
    ) -> Result<Var> {
        let vr = self.value(r);
        let n = adj.nrows();
        let t = types.iter().copied().max().map_or(0, |m| m + 1);
        if !adj.is_square() || types.len() != n || vr.nrows() < t || vr.ncols() < t || self.shape(p).0 != n {
            return Err(shape_err("relational_ppr", vr, adj));
        }
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let a = adj[(i, j)];
                if a != 0.0 {
                    edges.push((i, j, a));
                }
            }
        }
        let x: Vec<f64> = edges.iter().map(|&(i, j, a)| a * vr[(types[i], types[j])]).collect();
        let mut deg = vec![1.0; n];
        for (&(i, _, _), &xv) in edges.iter().zip(&x) {
            deg[i] += xv;
        }
        let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
        let mut cache = PprCache {
            r,
            p,
            types,
            edges,
            x,
            inv_sqrt,
            alpha,
            terms: vec![self.value(p).clone()],
        };
        let entries: Vec<_> = cache.entries().collect();
        let mut out = cache.terms[0].clone();
        for _ in 0..k_iter {
            let last = cache.terms.last().unwrap();
            if last.norm() < tol {
                break;
            }
            let next = sparse_mul(&entries, last, false) * alpha;
            out += &next;
            cache.terms.push(next);
        }
        let rg = self.rg(&[r, p]);
        Ok(self.push(out, Op::RelationalPpr(Box::new(cache)), rg))
    }

    /// Reverse pass from a `1 × 1` output. Does not mutate the tape, so it
    /// can be repeated.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let shape = self.shape(output);
        grads[output.0] = Some(Matrix::from_element(shape.0, shape.1, 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        let ga = &g * self.value(*b).transpose();
                        accumulate(&mut grads[a.0], ga);
                    }
                    if needs(b) {
                        let gb = self.value(*a).transpose() * &g;
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Add(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], -&g);
                    }
                }
                Op::Hadamard(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], g.component_mul(self.value(*b)));
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], g.component_mul(self.value(*a)));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], &g * *c),
                Op::AddRow(a, row) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if needs(row) {
                        accumulate(&mut grads[row.0], col_sums(&g));
                    }
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    if needs(a) {
                        let mut ga = g.clone();
                        for mut x in ga.row_iter_mut() {
                            x.component_mul_assign(r);
                        }
                        accumulate(&mut grads[a.0], ga);
                    }
                    if needs(row) {
                        accumulate(&mut grads[row.0], col_sums(&g.component_mul(self.value(*a))));
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g.component_mul(y);
                    for i in 0..ga.nrows() {
                        let dot: f64 = ga.row(i).sum();
                        for j in 0..ga.ncols() {
                            ga[(i, j)] -= y[(i, j)] * dot;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                    rows,
                } => {
                    let scale = g[(0, 0)] / rows.len() as f64;
                    let mut ga = Matrix::zeros(probs.nrows(), probs.ncols());
                    for &i in rows.iter() {
                        for j in 0..probs.ncols() {
                            ga[(i, j)] = probs[(i, j)] * scale;
                        }
                        ga[(i, labels[i])] -= scale;
                    }
                    accumulate(&mut grads[logits.0], ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads[a.0], Matrix::from_element(r, c, g[(0, 0)]));
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
                Op::ConcatCols(a, b) => {
                    let p = self.shape(*a).1;
                    if needs(a) {
                        accumulate(&mut grads[a.0], g.columns(0, p).into_owned());
                    }
                    if needs(b) {
                        let q = g.ncols() - p;
                        accumulate(&mut grads[b.0], g.columns(p, q).into_owned());
                    }
                }
                Op::SelectRows(a, rows) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for (k, &i) in rows.iter().enumerate() {
                        for j in 0..c {
                            ga[(i, j)] += g[(k, j)];
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Standardize {
                    x,
                    centered,
                    std,
                    eps,
                } => {
                    let n = centered.nrows() as f64;
                    let mut ga = Matrix::zeros(centered.nrows(), centered.ncols());
                    for j in 0..centered.ncols() {
                        let s = std[j] + eps;
                        let gcol = g.column(j);
                        let ccol = centered.column(j);
                        let gmean = gcol.sum() / n;
                        let gc = gcol.dot(&ccol);
                        let coupling = if std[j] > 0.0 { gc / (s * s * n * std[j]) } else { 0.0 };
                        for i in 0..centered.nrows() {
                            ga[(i, j)] = (gcol[i] - gmean) / s - coupling * ccol[i];
                        }
                    }
                    accumulate(&mut grads[x.0], ga);
                }
                Op::CosineSim {
                    a,
                    b,
                    norm_a,
                    norm_b,
                    eps,
                } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (n, m) = (va.nrows(), vb.nrows());
                    let mut q = Matrix::zeros(n, m);
                    let mut ra = vec![0.0; n];
                    let mut rb = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            let prod = norm_a[i] * norm_b[j];
                            let den = prod.max(*eps);
                            q[(i, j)] = g[(i, j)] / den;
                            if prod > *eps {
                                // ∂/∂den of P/den, times P
                                let t = g[(i, j)] * node.value[(i, j)] / den;
                                ra[i] += t * norm_b[j];
                                rb[j] += t * norm_a[i];
                            }
                        }
                    }
                    if needs(a) {
                        let mut ga = &q * vb;
                        for i in 0..n {
                            if norm_a[i] > 0.0 {
                                let c = ra[i] / norm_a[i];
                                for k in 0..ga.ncols() {
                                    ga[(i, k)] -= c * va[(i, k)];
                                }
                            }
                        }
                        accumulate(&mut grads[a.0], ga);
                    }
                    if needs(b) {
                        let mut gb = q.transpose() * va;
                        for j in 0..m {
                            if norm_b[j] > 0.0 {
                                let c = rb[j] / norm_b[j];
                                for k in 0..gb.ncols() {
                                    gb[(j, k)] -= c * vb[(j, k)];
                                }
                            }
                        }
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::RowNormalize { x, sums } => {
                    let vx = self.value(*x);
                    let mut ga = Matrix::zeros(vx.nrows(), vx.ncols());
                    for i in 0..vx.nrows() {
                        let s = sums[i];
                        if s <= 0.0 {
                            continue;
                        }
                        let dot: f64 = (0..vx.ncols()).map(|j| g[(i, j)] * vx[(i, j)]).sum();
                        for k in 0..vx.ncols() {
                            let v = vx[(i, k)];
                            let sign = if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            ga[(i, k)] = g[(i, k)] / s - sign * dot / (s * s);
                        }
                    }
                    accumulate(&mut grads[x.0], ga);
                }
                Op::SymNormalize { x, inv_sqrt } => {
                    let vx = self.value(*x);
                    let n = vx.nrows();
                    let m = |i: usize, j: usize| vx[(i, j)] + if i == j { 1.0 } else { 0.0 };
                    let mut ds = vec![0.0; n];
                    for i in 0..n {
                        for j in 0..n {
                            let gij = g[(i, j)];
                            ds[i] += gij * m(i, j) * inv_sqrt[j];
                            ds[j] += gij * inv_sqrt[i] * m(i, j);
                        }
                    }
                    // s = d^{-1/2}  =>  ds/dd = -s^3 / 2
                    let dd: Vec<f64> = (0..n)
                        .map(|k| -0.5 * inv_sqrt[k].powi(3) * ds[k])
                        .collect();
                    let ga = Matrix::from_fn(n, n, |i, j| g[(i, j)] * inv_sqrt[i] * inv_sqrt[j] + dd[i]);
                    accumulate(&mut grads[x.0], ga);
                }
                Op::Ste(y) => accumulate(&mut grads[y.0], g),
                Op::Scatter { v, at } => {
                    let mut gv = Matrix::zeros(self.shape(*v).0, 1);
                    for &(k, i, j) in at.iter() {
                        gv[(k, 0)] += g[(i, j)];
                    }
                    accumulate(&mut grads[v.0], gv);
                }
                Op::RelationalPpr(c) => {
                    let entries: Vec<_> = c.entries().collect();
                    let products = c.terms.len() - 1;
                    // cumulative adjoints L_q = Σ_{j≤q} (αÂᵀ)^j g
                    let mut lam = g.clone();
                    let mut cum = vec![g.clone()];
                    for _ in 0..products {
                        lam = sparse_mul(&entries, &lam, true) * c.alpha;
                        let next = cum.last().unwrap() + &lam;
                        cum.push(next);
                    }
                    if needs(&c.p) {
                        accumulate(&mut grads[c.p.0], cum[products].clone());
                    }
                    if needs(&c.r) {
                        // dL/dÂ_ij = α Σ_m (L_{K-1-m} T_mᵀ)_ij on the pattern
                        let g_hat: Vec<f64> = entries
                            .iter()
                            .map(|&(i, j, _)| {
                                let mut acc = 0.0;
                                for m in 0..products {
                                    let (l, t) = (&cum[products - 1 - m], &c.terms[m]);
                                    for k in 0..t.ncols() {
                                        acc += l[(i, k)] * t[(j, k)];
                                    }
                                }
                                c.alpha * acc
                            })
                            .collect();
                        let s = &c.inv_sqrt;
                        let n = s.len();
                        let ne = c.edges.len();
                        let mut ds = vec![0.0; n];
                        for (e, &(i, j, _)) in c.edges.iter().enumerate() {
                            ds[i] += g_hat[e] * c.x[e] * s[j];
                            ds[j] += g_hat[e] * s[i] * c.x[e];
                        }
                        for i in 0..n {
                            ds[i] += g_hat[ne + i] * 2.0 * s[i];
                        }
                        let dd: Vec<f64> = (0..n).map(|k| -0.5 * s[k].powi(3) * ds[k]).collect();
                        let (rr, rc) = self.shape(c.r);
                        let mut gr = Matrix::zeros(rr, rc);
                        for (e, &(i, j, a)) in c.edges.iter().enumerate() {
                            let dx = g_hat[e] * s[i] * s[j] + dd[i];
                            gr[(c.types[i], c.types[j])] += a * dx;
                        }
                        accumulate(&mut grads[c.r.0], gr);
                    }
                }
                Op::TypeReweight { r, adj, types } => {
                    let (rr, rc) = self.shape(*r);
                    let mut gr = Matrix::zeros(rr, rc);
                    for i in 0..adj.nrows() {
                        for j in 0..adj.ncols() {
                            let a = adj[(i, j)];
                            if a != 0.0 {
                                gr[(types[i], types[j])] += g[(i, j)] * a;
                            }
                        }
                    }
                    accumulate(&mut grads[r.0], gr);
                }
            }
        }
        Gradients { grads }
    }
}

fn col_sums(g: &Matrix) -> Matrix {
    Matrix::from_fn(1, g.ncols(), |_, j| g.column(j).sum())
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}
