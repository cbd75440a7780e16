use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{HeteroGraph, MetaRelation, NodeType, Split};
use crate::error::{Error, Result};

/// On-disk graph format (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub node_types: Vec<NodeTypeFile>,
    pub relations: Vec<RelationFile>,
    pub target_type: String,
    pub labels: Vec<usize>,
    pub masks: MasksFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTypeFile {
    pub name: String,
    pub count: usize,
    /// Row-major: one inner list per node.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationFile {
    pub src_type: String,
    pub name: String,
    pub dst_type: String,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub is_symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasksFile {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl GraphFile {
    pub fn into_graph(self) -> Result<HeteroGraph> {
        let mut node_types = Vec::with_capacity(self.node_types.len());
        for t in self.node_types {
            if t.features.len() != t.count {
                return Err(Error::InvalidGraph(format!(
                    "node type `{}`: count is {} but {} feature rows given",
                    t.name,
                    t.count,
                    t.features.len()
                )));
            }
            let dim = t.features.first().map_or(0, Vec::len);
            if let Some(i) = t.features.iter().position(|r| r.len() != dim) {
                return Err(Error::InvalidGraph(format!(
                    "node type `{}`: feature row {i} has length {}, expected {dim}",
                    t.name,
                    t.features[i].len()
                )));
            }
            if t.count > 0 && dim == 0 {
                return Err(Error::InvalidGraph(format!(
                    "node type `{}` has feature dimension 0",
                    t.name
                )));
            }
            let flat: Vec<f64> = t.features.into_iter().flatten().collect();
            // zero-node types keep a nominal width of 1
            let features = DMatrix::from_row_slice(t.count, dim.max(1), &flat);
            node_types.push(NodeType {
                name: t.name,
                features,
            });
        }
        let relations = self
            .relations
            .into_iter()
            .map(|r| MetaRelation {
                src_type: r.src_type,
                name: r.name,
                dst_type: r.dst_type,
                edges: r.edges,
                is_symmetric: r.is_symmetric,
            })
            .collect();
        let split = Split {
            train: self.masks.train,
            val: self.masks.val,
            test: self.masks.test,
        };
        HeteroGraph::new(node_types, relations, &self.target_type, self.labels, split)
    }

    pub fn from_graph(g: &HeteroGraph) -> Self {
        GraphFile {
            node_types: g
                .node_types()
                .iter()
                .map(|t| NodeTypeFile {
                    name: t.name.clone(),
                    count: t.count(),
                    features: t
                        .features
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                })
                .collect(),
            relations: g
                .relations()
                .iter()
                .map(|r| RelationFile {
                    src_type: r.src_type.clone(),
                    name: r.name.clone(),
                    dst_type: r.dst_type.clone(),
                    edges: r.edges.clone(),
                    is_symmetric: r.is_symmetric,
                })
                .collect(),
            target_type: g.target().name.clone(),
            labels: g.labels().to_vec(),
            masks: MasksFile {
                train: g.split().train.clone(),
                val: g.split().val.clone(),
                test: g.split().test.clone(),
            },
        }
    }
}

pub fn parse_graph(text: &str) -> Result<HeteroGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_graph()
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<HeteroGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_graph(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_graph(graph: &HeteroGraph, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string(&GraphFile::from_graph(graph))?;
    fs::write(path, text)?;
    Ok(())
}
