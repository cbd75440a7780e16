//! Heterogeneous graph data model.
//!
//! A [`HeteroGraph`] holds typed node sets (each with its own feature matrix),
//! a list of declared [`MetaRelation`]s, and labels plus a train/val/test
//! split for the target node type. Declared relations are kept exactly as
//! given so that saving and reloading a graph is lossless; the directed view
//! used by message passing ([`EdgeType`]) is materialized once at
//! construction.

mod io;
mod synthetic;

pub use io::{load_graph, save_graph, GraphFile};
pub use synthetic::{
    generate_synthetic, generate_synthetic_with_latent, SyntheticConfig, SyntheticRelation,
    SyntheticType,
};

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeType {
    pub name: String,
    /// `count × dim` feature matrix.
    pub features: DMatrix<f64>,
}

impl NodeType {
    pub fn count(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaRelation {
    pub src_type: String,
    pub name: String,
    pub dst_type: String,
    pub edges: Vec<(usize, usize)>,
    /// The reverse relation is implied.
    pub is_symmetric: bool,
}

impl MetaRelation {
    pub fn is_homogeneous(&self) -> bool {
        self.src_type == self.dst_type
    }
}

/// Index lists over target-type nodes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    /// Boolean view of one split over `n` target nodes.
    pub fn mask(&self, kind: SplitKind, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in self.indices(kind) {
            mask[i] = true;
        }
        mask
    }
}

/// A directed edge set between two node types, as seen by message passing.
///
/// Every entry of `edges` is `(src_index, dst_index)`; `edge_ids[e]` is the
/// position of the originating edge inside the declared relation, so
/// per-edge quantities learned on declared edges map onto both directions of
/// a symmetric relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeType {
    pub name: String,
    pub relation: usize,
    pub src_type: usize,
    pub dst_type: usize,
    pub edges: Vec<(usize, usize)>,
    pub edge_ids: Vec<usize>,
}

impl EdgeType {
    /// Dense `n_dst × n_src` adjacency; `weights` is indexed by declared edge id.
    pub fn dense(&self, n_src: usize, n_dst: usize, weights: &[f64]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(n_dst, n_src);
        for (&(s, d), &id) in self.edges.iter().zip(&self.edge_ids) {
            a[(d, s)] += weights[id];
        }
        a
    }
}

#[derive(Debug, Clone)]
pub struct HeteroGraph {
    node_types: Vec<NodeType>,
    relations: Vec<MetaRelation>,
    target_type: usize,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
    edge_types: Vec<EdgeType>,
}

impl PartialEq for HeteroGraph {
    fn eq(&self, other: &Self) -> bool {
        self.node_types == other.node_types
            && self.relations == other.relations
            && self.target_type == other.target_type
            && self.labels == other.labels
            && self.split == other.split
    }
}

impl HeteroGraph {
    /// Builds a graph and checks every structural invariant.
    pub fn new(
        node_types: Vec<NodeType>,
        relations: Vec<MetaRelation>,
        target_type: &str,
        labels: Vec<usize>,
        split: Split,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidGraph(msg));

        if node_types.is_empty() {
            return invalid("graph has no node types".into());
        }
        let mut seen = HashSet::new();
        for t in &node_types {
            if !seen.insert(t.name.as_str()) {
                return invalid(format!("duplicate node type `{}`", t.name));
            }
            if t.dim() == 0 {
                return invalid(format!("node type `{}` has feature dimension 0", t.name));
            }
            if t.features.iter().any(|v| !v.is_finite()) {
                return invalid(format!("node type `{}` has non-finite features", t.name));
            }
        }
        let type_index = |name: &str| node_types.iter().position(|t| t.name == name);
        let Some(target) = type_index(target_type) else {
            return invalid(format!("unknown target type `{target_type}`"));
        };
        let n_target = node_types[target].count();
        if n_target == 0 {
            return invalid(format!("target type `{target_type}` has no nodes"));
        }

        for rel in &relations {
            let (Some(s), Some(d)) = (type_index(&rel.src_type), type_index(&rel.dst_type)) else {
                return invalid(format!(
                    "relation `{}` references an unknown type ({} -> {})",
                    rel.name, rel.src_type, rel.dst_type
                ));
            };
            let (ns, nd) = (node_types[s].count(), node_types[d].count());
            let mut pairs = HashSet::with_capacity(rel.edges.len());
            for &(u, v) in &rel.edges {
                if u >= ns || v >= nd {
                    return invalid(format!(
                        "relation `{}`: edge ({u}, {v}) index out of range ({} has {ns} nodes, {} has {nd})",
                        rel.name, rel.src_type, rel.dst_type
                    ));
                }
                let key = if rel.is_symmetric && s == d {
                    (u.min(v), u.max(v))
                } else {
                    (u, v)
                };
                if !pairs.insert(key) {
                    return invalid(format!("relation `{}`: duplicate edge ({u}, {v})", rel.name));
                }
            }
        }

        if labels.len() != n_target {
            return invalid(format!(
                "expected {n_target} labels for target type, found {}",
                labels.len()
            ));
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);

        let mut owner = vec![None::<&str>; n_target];
        for (kind, name) in [
            (SplitKind::Train, "train"),
            (SplitKind::Val, "val"),
            (SplitKind::Test, "test"),
        ] {
            for &i in split.indices(kind) {
                if i >= n_target {
                    return invalid(format!("{name} mask index {i} out of range"));
                }
                if let Some(prev) = owner[i] {
                    return invalid(format!("masks are not disjoint: node {i} in {prev} and {name}"));
                }
                owner[i] = Some(name);
            }
        }
        let mut in_train = vec![false; num_classes];
        for &i in &split.train {
            in_train[labels[i]] = true;
        }
        if let Some(c) = in_train.iter().position(|&b| !b) {
            return invalid(format!("class {c} does not appear in the train mask"));
        }

        let edge_types = materialize(&node_types, &relations);
        Ok(Self {
            node_types,
            relations,
            target_type: target,
            labels,
            num_classes,
            split,
            edge_types,
        })
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn relations(&self) -> &[MetaRelation] {
        &self.relations
    }

    /// Directed edge sets, symmetric relations expanded in both directions.
    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn target_type(&self) -> usize {
        self.target_type
    }

    pub fn target(&self) -> &NodeType {
        &self.node_types[self.target_type]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn counts(&self) -> Vec<usize> {
        self.node_types.iter().map(NodeType::count).collect()
    }

    /// Start of each type's block in the global node ordering.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.node_types
            .iter()
            .map(|t| {
                let o = acc;
                acc += t.count();
                o
            })
            .collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.node_types.iter().map(NodeType::count).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.relations.iter().map(|r| r.edges.len()).sum()
    }

    /// Type id of every node in the global ordering.
    pub fn global_types(&self) -> Vec<usize> {
        self.node_types
            .iter()
            .enumerate()
            .flat_map(|(t, nt)| std::iter::repeat_n(t, nt.count()))
            .collect()
    }

    /// Global `N × N` adjacency, row = receiving node, over all directed edge types.
    pub fn full_adjacency(&self) -> DMatrix<f64> {
        let n = self.total_nodes();
        let off = self.offsets();
        let mut a = DMatrix::zeros(n, n);
        for et in &self.edge_types {
            for &(s, d) in &et.edges {
                a[(off[et.dst_type] + d, off[et.src_type] + s)] = 1.0;
            }
        }
        a
    }

    /// Same graph with the relations' edge lists replaced.
    pub fn with_relations(&self, relations: Vec<MetaRelation>) -> Result<Self> {
        Self::new(
            self.node_types.clone(),
            relations,
            &self.node_types[self.target_type].name,
            self.labels.clone(),
            self.split.clone(),
        )
    }

    /// Dense unit-weight adjacency of every directed edge type.
    pub fn edge_type_adjacency(&self) -> Vec<DMatrix<f64>> {
        self.edge_types
            .iter()
            .map(|et| {
                let r = &self.relations[et.relation];
                let ones = vec![1.0; r.edges.len()];
                et.dense(
                    self.node_types[et.src_type].count(),
                    self.node_types[et.dst_type].count(),
                    &ones,
                )
            })
            .collect()
    }
}

fn materialize(node_types: &[NodeType], relations: &[MetaRelation]) -> Vec<EdgeType> {
    let idx = |name: &str| node_types.iter().position(|t| t.name == name).unwrap();
    let mut out = Vec::new();
    for (ri, rel) in relations.iter().enumerate() {
        let (s, d) = (idx(&rel.src_type), idx(&rel.dst_type));
        let ids: Vec<usize> = (0..rel.edges.len()).collect();
        if rel.is_symmetric && s == d {
            let mut edges = Vec::with_capacity(2 * rel.edges.len());
            let mut edge_ids = Vec::with_capacity(2 * rel.edges.len());
            for (id, &(u, v)) in rel.edges.iter().enumerate() {
                edges.push((u, v));
                edge_ids.push(id);
                if u != v {
                    edges.push((v, u));
                    edge_ids.push(id);
                }
            }
            out.push(EdgeType {
                name: rel.name.clone(),
                relation: ri,
                src_type: s,
                dst_type: d,
                edges,
                edge_ids,
            });
        } else {
            out.push(EdgeType {
                name: rel.name.clone(),
                relation: ri,
                src_type: s,
                dst_type: d,
                edges: rel.edges.clone(),
                edge_ids: ids.clone(),
            });
            if rel.is_symmetric {
                out.push(EdgeType {
                    name: format!("rev_{}", rel.name),
                    relation: ri,
                    src_type: d,
                    dst_type: s,
                    edges: rel.edges.iter().map(|&(u, v)| (v, u)).collect(),
                    edge_ids: ids,
                });
            }
        }
    }
    out
}

/// Symmetric normalization with self-loops: `D^{-1/2} (A + I) D^{-1/2}`,
/// `D` the row sums of `A + I`.
pub fn normalize_adjacency(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Shape {
            op: "normalize_adjacency",
            lhs: a.shape(),
            rhs: (a.ncols(), a.nrows()),
        });
    }
    let n = a.nrows();
    let m = a + DMatrix::<f64>::identity(n, n);
    let inv_sqrt: Vec<f64> = m.row_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * m[(i, j)] * inv_sqrt[j]))
}

/// Weighted-mean aggregation operator: each row divided by the sum of its
/// absolute weights. Rows without neighbors stay zero.
pub fn mean_normalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut row in out.row_iter_mut() {
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            row /= s;
        }
    }
    out
}

/// Fraction of edges whose endpoints share a class.
pub fn edge_homophily(edges: &[(usize, usize)], src_class: &[usize], dst_class: &[usize]) -> f64 {
    if edges.is_empty() {
        return 0.0;
    }
    let same = edges
        .iter()
        .filter(|&&(u, v)| src_class[u] == dst_class[v])
        .count();
    same as f64 / edges.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HeteroGraph {
        HeteroGraph::new(
            vec![NodeType {
                name: "paper".into(),
                features: DMatrix::from_row_slice(2, 1, &[0.5, -1.0]),
            }],
            vec![MetaRelation {
                src_type: "paper".into(),
                name: "cites".into(),
                dst_type: "paper".into(),
                edges: vec![(0, 1)],
                is_symmetric: false,
            }],
            "paper",
            vec![0, 1],
            Split {
                train: vec![0, 1],
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn smallest_graph() {
        let g = tiny();
        assert_eq!(g.total_nodes(), 2);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.num_classes(), 2);
    }

    #[test]
    fn out_of_range_edge() {
        let err = HeteroGraph::new(
            vec![NodeType {
                name: "a".into(),
                features: DMatrix::zeros(3, 1),
            }],
            vec![MetaRelation {
                src_type: "a".into(),
                name: "r".into(),
                dst_type: "a".into(),
                edges: vec![(5, 0)],
                is_symmetric: false,
            }],
            "a",
            vec![0, 0, 0],
            Split {
                train: vec![0],
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("index out of range"), "{err}");
    }

    #[test]
    fn masks_must_be_disjoint_and_cover_classes() {
        let nt = vec![NodeType {
            name: "a".into(),
            features: DMatrix::zeros(3, 1),
        }];
        let overlap = Split {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        let err = HeteroGraph::new(nt.clone(), vec![], "a", vec![0, 1, 1], overlap).unwrap_err();
        assert!(err.to_string().contains("disjoint"));

        let missing = Split {
            train: vec![0],
            val: vec![1],
            test: vec![2],
        };
        let err = HeteroGraph::new(nt, vec![], "a", vec![0, 1, 1], missing).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn symmetric_relations_materialize_both_directions() {
        let g = HeteroGraph::new(
            vec![
                NodeType {
                    name: "p".into(),
                    features: DMatrix::zeros(2, 1),
                },
                NodeType {
                    name: "a".into(),
                    features: DMatrix::zeros(3, 2),
                },
            ],
            vec![
                MetaRelation {
                    src_type: "p".into(),
                    name: "writes".into(),
                    dst_type: "a".into(),
                    edges: vec![(0, 2), (1, 0)],
                    is_symmetric: true,
                },
                MetaRelation {
                    src_type: "p".into(),
                    name: "cites".into(),
                    dst_type: "p".into(),
                    edges: vec![(0, 1)],
                    is_symmetric: true,
                },
            ],
            "p",
            vec![0, 0],
            Split {
                train: vec![0],
                ..Default::default()
            },
        )
        .unwrap();
        let et = g.edge_types();
        assert_eq!(et.len(), 3);
        assert_eq!(et[1].name, "rev_writes");
        assert_eq!(et[1].edges, vec![(2, 0), (0, 1)]);
        assert_eq!(et[2].edges, vec![(0, 1), (1, 0)]);
        assert_eq!(et[2].edge_ids, vec![0, 0]);
        let full = g.full_adjacency();
        assert_eq!(full, full.transpose());
        assert_eq!(full.sum(), 6.0);
    }

    #[test]
    fn normalize_single_isolated_node() {
        let a = DMatrix::zeros(1, 1);
        assert_eq!(normalize_adjacency(&a).unwrap(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn normalize_path_matches_dense_formula() {
        let a = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 1., 0., 1., 0.]);
        let got = normalize_adjacency(&a).unwrap();
        // degrees with self loops: 2, 3, 2
        let d = [2.0f64, 3.0, 2.0];
        let m = &a + DMatrix::<f64>::identity(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let want = m[(i, j)] / (d[i] * d[j]).sqrt();
                assert!((got[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_rejects_non_square() {
        assert!(normalize_adjacency(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn mean_normalize_rows() {
        let a = DMatrix::from_row_slice(2, 3, &[1., 1., 0., 0., 0., 0.]);
        let m = mean_normalize(&a);
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5, 0.0]);
        assert_eq!(m.row(1).sum(), 0.0);
    }
}
