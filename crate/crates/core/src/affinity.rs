//! Class-level affinity from a personalized PageRank kernel.
//!
//! The kernel `B = Σ_k α^k Â^k ≈ (I − αÂ)^{-1}` summarizes multi-hop walk
//! mass. Sandwiching it between (surrogate) label matrices gives the `C × C`
//! class affinity `Yᵀ B Y`. On a heterogeneous graph every edge is first
//! scaled by a learnable type-pair importance `R[φ(i), φ(j)]`, the whole
//! graph is normalized, and only the target-type block of `B` is used.
//!
//! The class affinity is turned back into a node-level operator
//! `row_normalize(max(0, Ŷ Ĉ Ŷᵀ))` that smooths target features, and a
//! learned gate mixes the smoothed features into the structural ones.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{edge_type_pairs, observed_adjacency, rgcn_forward, RgcnParams};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numerics::{softmax_rows, Bound, Matrix, ParamId, ParamStore, Tape, Var};
use crate::trainer::{Adam, PRETRAIN_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PprConfig {
    pub alpha: f64,
    /// Maximum number of Neumann terms beyond the identity.
    pub k_iter: usize,
    /// Stop once the Frobenius norm of the latest term drops below this.
    pub tol: f64,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            alpha: 0.85,
            k_iter: 200,
            tol: 1e-9,
        }
    }
}

impl PprConfig {
    /// `α = 0` is accepted so the kernel can be collapsed to the identity.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1)", self.alpha)));
        }
        if self.k_iter == 0 {
            return Err(Error::Config("k_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Spectral-norm bound on the truncation error after `terms` powers,
    /// valid when `‖Â‖₂ ≤ 1`.
    pub fn truncation_bound(&self, terms: usize) -> f64 {
        self.alpha.powi(terms as i32 + 1) / (1.0 - self.alpha)
    }
}

/// Applies the truncated kernel to `m`: `Σ_{k=0}^{K} α^k Â^k m`.
pub fn ppr_apply(a_hat: &Matrix, m: &Matrix, cfg: &PprConfig) -> Result<Matrix> {
    if a_hat.ncols() != m.nrows() || !a_hat.is_square() {
        return Err(Error::Shape {
            op: "ppr_apply",
            lhs: a_hat.shape(),
            rhs: m.shape(),
        });
    }
    let mut term = m.clone();
    let mut acc = m.clone();
    for _ in 0..cfg.k_iter {
        if term.norm() < cfg.tol {
            break;
        }
        term = a_hat * term * cfg.alpha;
        acc += &term;
    }
    Ok(acc)
}

/// Dense truncated kernel `Σ_{k=0}^{K} α^k Â^k`.
pub fn ppr_kernel(a_hat: &Matrix, cfg: &PprConfig) -> Result<Matrix> {
    let n = a_hat.nrows();
    ppr_apply(a_hat, &Matrix::identity(n, n), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    ExactLabels,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub values: Matrix,
    pub provenance: Provenance,
}

/// `Yᵀ B Y` with `B` the truncated kernel of `Â`.
pub fn extended_affinity(a_hat: &Matrix, y: &Matrix, cfg: &PprConfig) -> Result<AffinityMatrix> {
    if y.nrows() != a_hat.nrows() {
        return Err(Error::Shape {
            op: "extended_affinity",
            lhs: a_hat.shape(),
            rhs: y.shape(),
        });
    }
    let by = ppr_apply(a_hat, y, cfg)?;
    Ok(AffinityMatrix {
        values: y.transpose() * by,
        provenance: Provenance::ExactLabels,
    })
}

/// One-hot `n × C` label matrix.
pub fn one_hot(labels: &[usize], c: usize) -> Matrix {
    Matrix::from_fn(labels.len(), c, |i, k| (labels[i] == k) as u8 as f64)
}

/// Learnable `|𝒜| × |𝒜|` type-pair importance, initialized to ones.
#[derive(Debug, Clone, Copy)]
pub struct TypeImportance {
    pub r: ParamId,
}

impl TypeImportance {
    pub fn new(store: &mut ParamStore, n_types: usize) -> Self {
        TypeImportance {
            r: store.add("affinity.r", Matrix::from_element(n_types, n_types, 1.0)),
        }
    }
}

/// `Ā_ij = A_ij R[φ(i), φ(j)]` over the global node ordering.
pub fn reweight_adjacency(tape: &mut Tape, graph: &HeteroGraph, r: Var) -> Result<Var> {
    let n_types = graph.node_types().len();
    if tape.shape(r) != (n_types, n_types) {
        return Err(Error::Shape {
            op: "reweight_adjacency",
            lhs: tape.shape(r),
            rhs: (n_types, n_types),
        });
    }
    tape.type_reweight(r, Rc::new(graph.full_adjacency()), Rc::new(graph.global_types()))
}

/// `Ŷ_tᵀ B_t Ŷ_t` where `B_t` is the target block of the kernel of the
/// normalized reweighted graph. Differentiable in `r`.
pub fn hetero_affinity(tape: &mut Tape, graph: &HeteroGraph, r: Var, y_t: &Matrix, cfg: &PprConfig) -> Result<Var> {
    let t = graph.target_type();
    let n_t = graph.counts()[t];
    if n_t == 0 {
        return Err(Error::EmptyMask("target type"));
    }
    if y_t.nrows() != n_t {
        return Err(Error::Shape {
            op: "hetero_affinity",
            lhs: (n_t, n_t),
            rhs: y_t.shape(),
        });
    }
    let off = graph.offsets()[t];
    let n_types = graph.node_types().len();
    if tape.shape(r) != (n_types, n_types) {
        return Err(Error::Shape {
            op: "hetero_affinity",
            lhs: tape.shape(r),
            rhs: (n_types, n_types),
        });
    }
    // Only the target columns of B matter, so the kernel is applied to the
    // labels embedded in the global ordering instead of formed densely.
    let mut p = Matrix::zeros(graph.total_nodes(), y_t.ncols());
    p.rows_mut(off, n_t).copy_from(y_t);
    let p = tape.constant(p);
    let bp = tape.relational_ppr(
        r,
        &graph.full_adjacency(),
        Rc::new(graph.global_types()),
        p,
        cfg.alpha,
        cfg.k_iter,
        cfg.tol,
    )?;
    let rows: Vec<usize> = (off..off + n_t).collect();
    let bp_t = tape.select_rows(bp, &rows);
    let yt = tape.constant(y_t.transpose());
    tape.matmul(yt, bp_t)
}

/// Plain-matrix evaluation of [`hetero_affinity`].
pub fn hetero_affinity_value(graph: &HeteroGraph, r: &Matrix, y_t: &Matrix, cfg: &PprConfig) -> Result<AffinityMatrix> {
    let mut tape = Tape::new();
    let rv = tape.constant(r.clone());
    let c = hetero_affinity(&mut tape, graph, rv, y_t, cfg)?;
    Ok(AffinityMatrix {
        values: tape.value(c).clone(),
        provenance: Provenance::Surrogate,
    })
}

/// Node-level affinity `row_normalize(max(0, Ŷ Ĉ Ŷᵀ))`; all-zero rows
/// become identity rows.
pub fn affinity_operator(tape: &mut Tape, c_hat: Var, y_t: &Matrix) -> Result<Var> {
    let y = tape.constant(y_t.clone());
    let yt = tape.constant(y_t.transpose());
    let m = tape.matmul(y, c_hat)?;
    let m = tape.matmul(m, yt)?;
    let m = tape.relu(m);
    Ok(tape.row_normalize(m, true))
}

/// `H_aff = Â_aff X`.
pub fn affinity_features(tape: &mut Tape, c_hat: Var, y_t: &Matrix, x: Var) -> Result<Var> {
    let a = affinity_operator(tape, c_hat, y_t)?;
    tape.matmul(a, x)
}

#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    /// `2d × d`.
    pub w: ParamId,
    /// `1 × d`.
    pub b: ParamId,
}

impl GateParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Self {
        GateParams {
            w: store.add_uniform(format!("{prefix}.w"), 2 * d, d, 2 * d, rng),
            b: store.add_uniform(format!("{prefix}.b"), 1, d, 2 * d, rng),
        }
    }
}

/// `(1 − g) ⊙ h + g ⊙ h_aff` with `g = σ([h, h_aff] W + b)`.
pub fn gate_fuse(tape: &mut Tape, bound: &Bound, h: Var, h_aff: Var, gate: &GateParams) -> Result<Var> {
    let cat = tape.concat_cols(h, h_aff)?;
    let z = tape.matmul(cat, bound[gate.w])?;
    let z = tape.add_row(z, bound[gate.b])?;
    let g = tape.sigmoid(z);
    let diff = tape.sub(h_aff, h)?;
    let mixed = tape.hadamard(g, diff)?;
    tape.add(h, mixed)
}

/// Row-stochastic label estimate for the target type; train rows are the
/// exact one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLabels {
    pub probs: Matrix,
}

impl SurrogateLabels {
    /// Overwrites the rows listed in `train` with one-hot labels.
    pub fn from_predictions(mut probs: Matrix, labels: &[usize], train: &[usize]) -> Self {
        for &i in train {
            for k in 0..probs.ncols() {
                probs[(i, k)] = (labels[i] == k) as u8 as f64;
            }
        }
        SurrogateLabels { probs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            lr: 5e-3,
            weight_decay: 0.0,
            hidden: 64,
            depth: 1,
            seed: 0,
        }
    }
}

/// Trains a fresh R-GCN with a linear readout on the observed graph and
/// returns its softmax predictions with train rows replaced by labels.
pub fn pretrain_predict(graph: &HeteroGraph, cfg: &PretrainConfig) -> Result<SurrogateLabels> {
    let (logits, _) = pretrain_logits(graph, cfg)?;
    Ok(SurrogateLabels::from_predictions(
        softmax_rows(&logits),
        graph.labels(),
        &graph.split().train,
    ))
}

/// Target-type logits of the pretrained model and its final train loss.
pub fn pretrain_logits(graph: &HeteroGraph, cfg: &PretrainConfig) -> Result<(Matrix, f64)> {
    let train = &graph.split().train;
    if train.is_empty() {
        return Err(Error::EmptyMask("train"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PRETRAIN_STREAM);
    let mut store = ParamStore::new();
    let dims: Vec<usize> = graph.node_types().iter().map(|t| t.dim()).collect();
    let enc = RgcnParams::new(&mut store, "pretrain.rgcn", &dims, &edge_type_pairs(graph), cfg.hidden, cfg.depth, &mut rng);
    let c = graph.num_classes();
    let w = store.add_uniform("pretrain.readout.w", cfg.hidden, c, cfg.hidden, &mut rng);
    let b = store.add_uniform("pretrain.readout.b", 1, c, cfg.hidden, &mut rng);
    let t = graph.target_type();
    let mask = graph.split().mask(crate::graph::SplitKind::Train, graph.counts()[t]);
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);

    let forward = |tape: &mut Tape, bound: &Bound| -> Result<Var> {
        let raw: Vec<Var> = graph
            .node_types()
            .iter()
            .map(|nt| tape.constant(nt.features.clone()))
            .collect();
        let adj = observed_adjacency(tape, graph);
        let h = rgcn_forward(tape, bound, &enc, &raw, &adj)?;
        let e = tape.relu(h[t]);
        let z = tape.matmul(e, bound[w])?;
        tape.add_row(z, bound[b])
    };

    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let logits = forward(&mut tape, &bound)?;
        let loss = tape.cross_entropy(logits, graph.labels(), &mask)?;
        last_loss = tape.scalar(loss);
        if !last_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let grads = tape.backward(loss);
        adam.step(&mut store, &bound, &grads);
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let logits = forward(&mut tape, &bound)?;
    Ok((tape.value(logits).clone(), last_loss))
}
