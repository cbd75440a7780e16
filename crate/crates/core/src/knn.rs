//! kNN graphs over projected features, one per meta-relation.
//!
//! For a relation between types `i` and `j`, every type-`i` node picks its
//! `k` most cosine-similar type-`j` nodes and (with [`KnnDirection::Both`])
//! every type-`j` node does the same towards type `i`; the union of picks is
//! the relation's kNN edge set. Selected edges carry their similarity as
//! weight.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::encoders::{rgcn_forward, RelationAdjacency, RgcnParams};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numerics::{Bound, Matrix, Tape, Var};

/// Norm guard of the cosine similarity.
pub const SIM_EPS: f64 = 1e-12;

/// Resolution at which similarities are ranked. Rescaling a feature row
/// perturbs its cosines by a few ulps; ranking on this grid keeps exact
/// ties tied so the index tie-break decides them.
pub const RANK_RESOLUTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnDirection {
    /// Only source-type nodes select neighbors.
    SrcOnly,
    /// Both endpoint types select; the union is kept.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub direction: KnnDirection,
    /// Keep selected neighbors whose similarity is negative.
    pub keep_negative: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 8,
            direction: KnnDirection::Both,
            keep_negative: true,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("knn k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// kNN edges of every declared relation, `src`/`dst` in the relation's
/// orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub relations: Vec<Vec<KnnEdge>>,
}

pub fn similarity_matrix(h_i: &Matrix, h_j: &Matrix) -> Matrix {
    let na: Vec<f64> = h_i.row_iter().map(|r| r.norm()).collect();
    let nb: Vec<f64> = h_j.row_iter().map(|r| r.norm()).collect();
    let mut s = h_i * h_j.transpose();
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            s[(i, j)] /= (na[i] * nb[j]).max(SIM_EPS);
        }
    }
    s
}

/// Column indices of the `k` largest entries of every row (compared at
/// [`RANK_RESOLUTION`]), ties broken by smallest column index. The diagonal
/// can be excluded for same-type relations.
pub fn top_k_per_row(s: &Matrix, k: usize, exclude_diagonal: bool) -> Vec<Vec<usize>> {
    let rank = |x: f64| (x / RANK_RESOLUTION).round() as i64;
    (0..s.nrows())
        .map(|u| {
            let mut cols: Vec<usize> = (0..s.ncols())
                .filter(|&v| !(exclude_diagonal && u == v))
                .collect();
            cols.sort_by_key(|&v| (std::cmp::Reverse(rank(s[(u, v)])), v));
            cols.truncate(k);
            cols.sort_unstable();
            cols
        })
        .collect()
}

/// Selected `(row, col)` pairs of a similarity matrix, sorted and deduplicated.
pub fn select_pairs(s: &Matrix, cfg: &KnnConfig, same_type: bool) -> Vec<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    for (u, cols) in top_k_per_row(s, cfg.k, same_type).into_iter().enumerate() {
        pairs.extend(cols.into_iter().map(|v| (u, v)));
    }
    if cfg.direction == KnnDirection::Both {
        let st = s.transpose();
        for (v, rows) in top_k_per_row(&st, cfg.k, same_type).into_iter().enumerate() {
            pairs.extend(rows.into_iter().map(|u| (u, v)));
        }
    }
    pairs
        .into_iter()
        .filter(|&(u, v)| cfg.keep_negative || s[(u, v)] >= 0.0)
        .collect()
}

pub fn build_knn_edges(s: &Matrix, cfg: &KnnConfig, same_type: bool) -> Vec<KnnEdge> {
    select_pairs(s, cfg, same_type)
        .into_iter()
        .map(|(u, v)| KnnEdge {
            src: u,
            dst: v,
            weight: s[(u, v)],
        })
        .collect()
}

/// Builds the similarity graph from plain projected features.
pub fn build_similarity_graph(graph: &HeteroGraph, projected: &[Matrix], cfg: &KnnConfig) -> Result<SimilarityGraph> {
    cfg.validate()?;
    let relations = graph
        .relations()
        .iter()
        .map(|r| {
            let i = graph.type_index(&r.src_type).unwrap();
            let j = graph.type_index(&r.dst_type).unwrap();
            let s = similarity_matrix(&projected[i], &projected[j]);
            build_knn_edges(&s, cfg, i == j)
        })
        .collect();
    Ok(SimilarityGraph { relations })
}

/// Directed edge types of the kNN graph: per declared relation, one
/// self-type edge type or a forward/backward pair.
pub fn knn_edge_types(graph: &HeteroGraph) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in graph.relations() {
        let i = graph.type_index(&r.src_type).unwrap();
        let j = graph.type_index(&r.dst_type).unwrap();
        out.push((i, j));
        if i != j {
            out.push((j, i));
        }
    }
    out
}

/// Mean-normalized kNN adjacency per kNN edge type, recorded on the tape so
/// that the similarity weights stay differentiable w.r.t. the projection.
/// Edge selection itself is a piecewise-constant function of the features.
pub fn knn_adjacency(tape: &mut Tape, graph: &HeteroGraph, projected: &[Var], cfg: &KnnConfig) -> Result<Vec<RelationAdjacency>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for r in graph.relations() {
        let i = graph.type_index(&r.src_type).unwrap();
        let j = graph.type_index(&r.dst_type).unwrap();
        let s = tape.cosine_sim(projected[i], projected[j], SIM_EPS)?;
        let pairs = select_pairs(tape.value(s), cfg, i == j);
        let (ni, nj) = tape.shape(s);
        let mut mask = Matrix::zeros(ni, nj);
        for &(u, v) in &pairs {
            mask[(u, v)] = 1.0;
            if i == j {
                mask[(v, u)] = 1.0;
            }
        }
        let m = tape.constant(mask);
        let w = tape.hadamard(s, m)?;
        if i == j {
            let adj = tape.row_normalize(w, false);
            out.push(RelationAdjacency { src: i, dst: i, adj });
        } else {
            // forward edge type: dst type j receives from i
            let wt = tape.transpose(w);
            let fwd = tape.row_normalize(wt, false);
            out.push(RelationAdjacency { src: i, dst: j, adj: fwd });
            let bwd = tape.row_normalize(w, false);
            out.push(RelationAdjacency { src: j, dst: i, adj: bwd });
        }
    }
    Ok(out)
}

/// Similarity-path encoding: kNN graph over the projected features, then
/// the relational encoder on top of it.
pub fn knn_encode(
    tape: &mut Tape,
    bound: &Bound,
    graph: &HeteroGraph,
    projected: &[Var],
    cfg: &KnnConfig,
    encoder: &RgcnParams,
) -> Result<Vec<Var>> {
    let adjacency = knn_adjacency(tape, graph, projected, cfg)?;
    rgcn_forward(tape, bound, encoder, projected, &adjacency)
}
