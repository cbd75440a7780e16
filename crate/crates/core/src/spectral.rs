//! Two-type block Laplacian diagnostics: Schur-complement block
//! diagonalization, spectral energy of label signals, cross-type Dirichlet
//! energy and Weyl perturbation bounds.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::graph::{normalize_adjacency, HeteroGraph};
use crate::{Error, Result};

/// Tikhonov shift applied to a singular `I − Â₁`.
pub const SCHUR_EPS: f64 = 1e-8;
/// Smallest eigenvalue of `I − Â₁` below which the shift is applied.
pub const SINGULAR_TOL: f64 = 1e-10;
/// Slack allowed by [`weyl_bound_check`] for round-off.
pub const WEYL_SLACK: f64 = 1e-10;

/// Normalized two-type adjacency split into blocks, with the assembled
/// Laplacian `L = I − Â`.
#[derive(Clone, Debug)]
pub struct BlockLaplacian {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
}

impl BlockLaplacian {
    /// Assemble from a symmetric two-type adjacency whose first `n1` rows
    /// belong to type 1.
    pub fn from_adjacency(adj: &DMatrix<f64>, n1: usize) -> Result<Self> {
        let n = adj.nrows();
        if n1 == 0 || n1 >= n {
            return Err(Error::Config(format!(
                "both node types need at least one node (n1 = {n1}, n = {n})"
            )));
        }
        let norm = normalize_adjacency(adj)?;
        let n2 = n - n1;
        Ok(BlockLaplacian {
            a1: norm.view((0, 0), (n1, n1)).into_owned(),
            a2: norm.view((n1, n1), (n2, n2)).into_owned(),
            b: norm.view((0, n1), (n1, n2)).into_owned(),
            laplacian: DMatrix::identity(n, n) - norm,
        })
    }

    pub fn n1(&self) -> usize {
        self.a1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.a2.nrows()
    }

    /// `L₁ = I − Â₁`.
    pub fn l1(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n1(), self.n1()) - &self.a1
    }

    /// `L₂ = I − Â₂`.
    pub fn l2(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n2(), self.n2()) - &self.a2
    }

    /// Ascending eigenpairs of `L₁`.
    pub fn l1_eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        sorted_eigen(&self.l1())
    }
}

/// Restrict `graph` to two node types (by name) and build the block
/// Laplacian over every relation among them. Edge directions are merged so
/// the assembled adjacency is symmetric.
pub fn build_block_laplacian(graph: &HeteroGraph, type1: &str, type2: &str) -> Result<BlockLaplacian> {
    let lookup = |name: &str| {
        graph
            .type_index(name)
            .ok_or_else(|| Error::Config(format!("unknown node type `{name}`")))
    };
    let (t1, t2) = (lookup(type1)?, lookup(type2)?);
    if t1 == t2 {
        return Err(Error::Config("block analysis needs two distinct node types".into()));
    }
    let counts = graph.counts();
    let (n1, n2) = (counts[t1], counts[t2]);
    let offset = |t: usize| if t == t1 { Some(0) } else if t == t2 { Some(n1) } else { None };
    let mut adj = DMatrix::zeros(n1 + n2, n1 + n2);
    for et in graph.edge_types() {
        let (Some(os), Some(od)) = (offset(et.src_type), offset(et.dst_type)) else {
            continue;
        };
        for &(s, d) in &et.edges {
            adj[(od + d, os + s)] = 1.0;
            adj[(os + s, od + d)] = 1.0;
        }
    }
    BlockLaplacian::from_adjacency(&adj, n1)
}

/// Schur complement of `L₁` in `L`, and whether `L₁` had to be shifted.
#[derive(Clone, Debug)]
pub struct Schur {
    pub s: DMatrix<f64>,
    /// `B̂ᵀ L₁⁻¹ B̂`.
    pub correction: DMatrix<f64>,
    /// `L₁⁻¹` as used (shifted when regularized).
    pub l1_inv: DMatrix<f64>,
    pub regularized: bool,
}

/// `S = (I − Â₂) − B̂ᵀ(I − Â₁)⁻¹B̂`, shifting `I − Â₁` by [`SCHUR_EPS`] when
/// its smallest eigenvalue falls below [`SINGULAR_TOL`].
pub fn schur_complement(bl: &BlockLaplacian) -> Result<Schur> {
    let mut l1 = bl.l1();
    let (vals, _) = sorted_eigen(&l1);
    let regularized = vals[0] < SINGULAR_TOL;
    if regularized {
        for i in 0..l1.nrows() {
            l1[(i, i)] += SCHUR_EPS;
        }
    }
    let l1_inv = l1
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| l1.clone().try_inverse())
        .ok_or_else(|| Error::Numeric("I − Â₁ is not invertible".into()))?;
    let correction = bl.b.transpose() * &l1_inv * &bl.b;
    Ok(Schur {
        s: bl.l2() - &correction,
        correction,
        l1_inv,
        regularized,
    })
}

/// Lower, block-diagonal and upper factors whose product is `L`.
pub fn block_factors(bl: &BlockLaplacian, schur: &Schur) -> [DMatrix<f64>; 3] {
    let (n1, n2) = (bl.n1(), bl.n2());
    let n = n1 + n2;
    // Off-diagonal blocks of L are −B̂.
    let coupling = -(&schur.l1_inv * &bl.b);
    let mut lower = DMatrix::identity(n, n);
    lower.view_mut((n1, 0), (n2, n1)).copy_from(&coupling.transpose());
    let mut upper = DMatrix::identity(n, n);
    upper.view_mut((0, n1), (n1, n2)).copy_from(&coupling);
    let mut middle = DMatrix::zeros(n, n);
    middle.view_mut((0, 0), (n1, n1)).copy_from(&bl.l1());
    middle.view_mut((n1, n1), (n2, n2)).copy_from(&schur.s);
    [lower, middle, upper]
}

/// Frobenius residual of the three-factor product against `L`.
pub fn verify_decomposition(bl: &BlockLaplacian) -> Result<f64> {
    let schur = schur_complement(bl)?;
    let [lo, mid, up] = block_factors(bl, &schur);
    Ok((lo * mid * up - &bl.laplacian).norm())
}

/// The correction `B̂ᵀL₁⁻¹B̂` rebuilt from the eigenpairs of `L₁` as
/// `Σ_k (1/λ_k)(B̂ᵀu_k)(B̂ᵀu_k)ᵀ`.
pub fn correction_from_eigen(bl: &BlockLaplacian) -> DMatrix<f64> {
    let (vals, vecs) = bl.l1_eigen();
    let mut out = DMatrix::zeros(bl.n2(), bl.n2());
    for k in 0..vals.len() {
        let proj = bl.b.transpose() * vecs.column(k);
        out += (&proj * proj.transpose()) / vals[k];
    }
    out
}

/// Energy of a signal across the eigenbasis of a symmetric operator.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralEnergy {
    pub eigenvalues: Vec<f64>,
    pub energy: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl SpectralEnergy {
    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    /// `Σλ_k e_k / Σe_k`; zero for the zero signal.
    pub fn centroid(&self) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 0.0;
        }
        self.eigenvalues.iter().zip(&self.energy).map(|(l, e)| l * e).sum::<f64>() / total
    }

    /// Shannon entropy (nats) of the normalized energy distribution.
    pub fn entropy(&self) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 0.0;
        }
        self.energy
            .iter()
            .map(|e| e / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    /// Fraction of energy on eigenvalues strictly below the median eigenvalue.
    pub fn low_fraction(&self) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 0.0;
        }
        let n = self.eigenvalues.len();
        let median = if n % 2 == 1 {
            self.eigenvalues[n / 2]
        } else {
            0.5 * (self.eigenvalues[n / 2 - 1] + self.eigenvalues[n / 2])
        };
        self.eigenvalues
            .iter()
            .zip(&self.energy)
            .filter(|(l, _)| **l < median)
            .map(|(_, e)| e)
            .sum::<f64>()
            / total
    }

    /// CSV with columns `lambda,energy,cumulative`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "energy", "cumulative"])?;
        for k in 0..self.eigenvalues.len() {
            w.write_record(&[
                self.eigenvalues[k].to_string(),
                self.energy[k].to_string(),
                self.cumulative[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Full eigendecomposition of `l`, then `e_k = (u_kᵀ f)²`.
pub fn spectral_energy(l: &DMatrix<f64>, f: &DVector<f64>) -> Result<SpectralEnergy> {
    if !l.is_square() || l.nrows() != f.len() {
        return Err(Error::Shape {
            op: "spectral_energy",
            lhs: l.shape(),
            rhs: (f.len(), 1),
        });
    }
    let (vals, vecs) = sorted_eigen(l);
    let energy: Vec<f64> = (0..vals.len()).map(|k| vecs.column(k).dot(f).powi(2)).collect();
    let total: f64 = energy.iter().sum();
    let mut acc = 0.0;
    let cumulative = energy
        .iter()
        .map(|e| {
            acc += e;
            if total > 0.0 { acc / total } else { 0.0 }
        })
        .collect();
    Ok(SpectralEnergy {
        eigenvalues: vals.iter().copied().collect(),
        energy,
        cumulative,
    })
}

/// `±1` one-vs-rest indicator of `class`; nodes without a class get 0.
pub fn class_signal(classes: &[Option<usize>], class: usize) -> DVector<f64> {
    DVector::from_iterator(
        classes.len(),
        classes.iter().map(|c| match c {
            Some(k) if *k == class => 1.0,
            Some(_) => -1.0,
            None => 0.0,
        }),
    )
}

/// Class assignment over the two-type node ordering of
/// [`build_block_laplacian`]: labels on the target type, `None` elsewhere.
pub fn block_classes(graph: &HeteroGraph, type1: &str, type2: &str) -> Result<Vec<Option<usize>>> {
    let mut out = Vec::new();
    for name in [type1, type2] {
        let t = graph
            .type_index(name)
            .ok_or_else(|| Error::Config(format!("unknown node type `{name}`")))?;
        let n = graph.counts()[t];
        if t == graph.target_type() {
            out.extend(graph.labels().iter().map(|&c| Some(c)));
        } else {
            out.extend(std::iter::repeat_n(None, n));
        }
    }
    Ok(out)
}

/// `Σ B̂_ij (f₁ᵢ − f₂ⱼ)²`.
pub fn cross_dirichlet(b: &DMatrix<f64>, f1: &DVector<f64>, f2: &DVector<f64>) -> Result<f64> {
    if b.nrows() != f1.len() || b.ncols() != f2.len() {
        return Err(Error::Shape {
            op: "cross_dirichlet",
            lhs: b.shape(),
            rhs: (f1.len(), f2.len()),
        });
    }
    let mut e = 0.0;
    for j in 0..b.ncols() {
        for i in 0..b.nrows() {
            let w = b[(i, j)];
            if w != 0.0 {
                e += w * (f1[i] - f2[j]).powi(2);
            }
        }
    }
    Ok(e)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeylCheck {
    pub max_shift: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Compare sorted eigenvalues of `l` and `l_perturbed` against `‖δL‖₂`.
pub fn weyl_bound_check(l: &DMatrix<f64>, l_perturbed: &DMatrix<f64>) -> Result<WeylCheck> {
    if l.shape() != l_perturbed.shape() || !l.is_square() {
        return Err(Error::Shape {
            op: "weyl_bound_check",
            lhs: l.shape(),
            rhs: l_perturbed.shape(),
        });
    }
    let (a, _) = sorted_eigen(l);
    let (b, _) = sorted_eigen(l_perturbed);
    let max_shift = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let delta = l_perturbed - l;
    let bound = SymmetricEigen::new(delta)
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    Ok(WeylCheck {
        max_shift,
        bound,
        holds: max_shift <= bound + WEYL_SLACK,
    })
}

/// One-sided sign-test p-value: probability of at least `successes` out of
/// `trials` fair coin flips.
pub fn sign_test_p(successes: usize, trials: usize) -> f64 {
    let mut coef = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=trials {
        if k > 0 {
            coef *= (trials - k + 1) as f64 / k as f64;
        }
        if k >= successes {
            tail += coef;
        }
    }
    tail / 2f64.powi(trials as i32)
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(m.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}
