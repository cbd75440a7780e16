//! Type-specific MLP projection, relational graph convolution and GraphNorm.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{mean_normalize, HeteroGraph};
use crate::numerics::{Bound, Matrix, ParamId, ParamStore, Tape, Var};

/// Column-std guard of [`graph_norm`].
pub const GRAPH_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TypeMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Two-layer MLP per node type, `d_t → d → d`.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub per_type: Vec<TypeMlp>,
    pub activation: Activation,
    pub out_dim: usize,
}

impl MlpParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, in_dims: &[usize], d: usize, rng: &mut R) -> Self {
        let per_type = in_dims
            .iter()
            .enumerate()
            .map(|(t, &dt)| TypeMlp {
                w1: store.add_uniform(format!("{prefix}.{t}.w1"), dt, d, dt, rng),
                b1: store.add_uniform(format!("{prefix}.{t}.b1"), 1, d, dt, rng),
                w2: store.add_uniform(format!("{prefix}.{t}.w2"), d, d, d, rng),
                b2: store.add_uniform(format!("{prefix}.{t}.b2"), 1, d, d, rng),
            })
            .collect();
        MlpParams {
            per_type,
            activation: Activation::Relu,
            out_dim: d,
        }
    }
}

/// `h_t = act(X_t W1 + b1) W2 + b2` for every node type.
pub fn project_features(tape: &mut Tape, bound: &Bound, params: &MlpParams, features: &[Var]) -> Result<Vec<Var>> {
    if params.per_type.len() < features.len() {
        return Err(Error::MissingType(format!("type #{}", params.per_type.len())));
    }
    features
        .iter()
        .zip(&params.per_type)
        .map(|(&x, p)| {
            let h = tape.matmul(x, bound[p.w1])?;
            let h = tape.add_row(h, bound[p.b1])?;
            let h = params.activation.apply(tape, h);
            let h = tape.matmul(h, bound[p.w2])?;
            tape.add_row(h, bound[p.b2])
        })
        .collect()
}

/// Adjacency of one directed edge type: rows index `dst` nodes, columns `src`.
#[derive(Debug, Clone, Copy)]
pub struct RelationAdjacency {
    pub src: usize,
    pub dst: usize,
    pub adj: Var,
}

#[derive(Debug, Clone)]
pub struct RgcnLayer {
    /// One transform per directed edge type.
    pub relation_weights: Vec<ParamId>,
    /// Self-loop transform and bias per node type.
    pub self_weights: Vec<ParamId>,
    pub biases: Vec<Option<ParamId>>,
}

/// Stack of relational graph convolution layers with ReLU in between.
#[derive(Debug, Clone)]
pub struct RgcnParams {
    pub layers: Vec<RgcnLayer>,
}

impl RgcnParams {
    /// `in_dims[t]` is the input width of node type `t`; `edge_types` lists
    /// `(src_type, dst_type)` per directed edge type.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dims: &[usize],
        edge_types: &[(usize, usize)],
        out_dim: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let mut dims = in_dims.to_vec();
        let layers = (0..depth.max(1))
            .map(|l| {
                let relation_weights = edge_types
                    .iter()
                    .enumerate()
                    .map(|(r, &(s, _))| store.add_uniform(format!("{prefix}.{l}.rel{r}"), dims[s], out_dim, dims[s], rng))
                    .collect();
                let self_weights = dims
                    .iter()
                    .enumerate()
                    .map(|(t, &dt)| store.add_uniform(format!("{prefix}.{l}.self{t}"), dt, out_dim, dt, rng))
                    .collect();
                let biases = dims
                    .iter()
                    .enumerate()
                    .map(|(t, &dt)| Some(store.add_uniform(format!("{prefix}.{l}.bias{t}"), 1, out_dim, dt, rng)))
                    .collect();
                dims = vec![out_dim; dims.len()];
                RgcnLayer {
                    relation_weights,
                    self_weights,
                    biases,
                }
            })
            .collect();
        RgcnParams { layers }
    }
}

/// One relational convolution:
/// `out_t = X_t W_self,t + b_t + Σ_{r: dst(r)=t} Â_r X_{src(r)} W_r`.
pub fn rgcn_layer(
    tape: &mut Tape,
    bound: &Bound,
    layer: &RgcnLayer,
    features: &[Var],
    adjacency: &[RelationAdjacency],
) -> Result<Vec<Var>> {
    let n_types = features.len();
    if layer.self_weights.len() != n_types {
        return Err(Error::MissingType(format!("type #{}", layer.self_weights.len().min(n_types))));
    }
    let mut out = Vec::with_capacity(n_types);
    for t in 0..n_types {
        let h = tape.matmul(features[t], bound[layer.self_weights[t]])?;
        out.push(match layer.biases[t] {
            Some(b) => tape.add_row(h, bound[b])?,
            None => h,
        });
    }
    if adjacency.len() != layer.relation_weights.len() {
        return Err(Error::Config(format!(
            "{} relation adjacencies for {} relation transforms",
            adjacency.len(),
            layer.relation_weights.len()
        )));
    }
    for (ra, &w) in adjacency.iter().zip(&layer.relation_weights) {
        if ra.src >= n_types || ra.dst >= n_types {
            return Err(Error::InvalidGraph(format!(
                "relation references unknown type ({} -> {})",
                ra.src, ra.dst
            )));
        }
        let msg = tape.matmul(ra.adj, features[ra.src])?;
        let msg = tape.matmul(msg, bound[w])?;
        out[ra.dst] = tape.add(out[ra.dst], msg)?;
    }
    Ok(out)
}

pub fn rgcn_forward(
    tape: &mut Tape,
    bound: &Bound,
    params: &RgcnParams,
    features: &[Var],
    adjacency: &[RelationAdjacency],
) -> Result<Vec<Var>> {
    let mut h = features.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        h = rgcn_layer(tape, bound, layer, &h, adjacency)?;
        if l + 1 < params.layers.len() {
            h = h.into_iter().map(|x| tape.relu(x)).collect();
        }
    }
    Ok(h)
}

/// Mean-normalized adjacency of every directed edge type of the observed
/// graph, recorded as constants.
pub fn observed_adjacency(tape: &mut Tape, graph: &HeteroGraph) -> Vec<RelationAdjacency> {
    graph
        .edge_types()
        .iter()
        .zip(graph.edge_type_adjacency())
        .map(|(et, a)| RelationAdjacency {
            src: et.src_type,
            dst: et.dst_type,
            adj: tape.constant(mean_normalize(&a)),
        })
        .collect()
}

/// Edge-type endpoint pairs in the layout [`RgcnParams::new`] expects.
pub fn edge_type_pairs(graph: &HeteroGraph) -> Vec<(usize, usize)> {
    graph.edge_types().iter().map(|e| (e.src_type, e.dst_type)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        NormParams {
            scale: store.add(format!("{prefix}.scale"), Matrix::from_element(1, d, 1.0)),
            shift: store.add(format!("{prefix}.shift"), Matrix::zeros(1, d)),
        }
    }
}

/// Per-feature standardization over the nodes, followed by a learnable
/// affine map.
pub fn graph_norm(tape: &mut Tape, bound: &Bound, h: Var, params: &NormParams) -> Result<Var> {
    let z = tape.standardize(h, GRAPH_NORM_EPS);
    let z = tape.mul_row(z, bound[params.scale])?;
    tape.add_row(z, bound[params.shift])
}
