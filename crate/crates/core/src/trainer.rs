//! End-to-end training of HGUL and of the R-GCN / GCN baselines.
//!
//! One epoch is one full-batch step:
//!
//! 1. project every type to `d` dimensions with its MLP;
//! 2. encode over the kNN graph of the projections (similarity path);
//! 3. sample, threshold and refine the observed edges, then encode the raw
//!    features over the refined graph (structure path);
//! 4. `h = GraphNorm(h_struct + h_knn)` on the target type;
//! 5. smooth `h` with the class-affinity operator and gate-fuse;
//! 6. linear classifier, cross-entropy on the train mask, plus `γ L_reg`;
//! 7. one Adam step, then evaluation with the Gumbel noise switched off.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{
    affinity_features, hetero_affinity, pretrain_predict, GateParams, PprConfig, PretrainConfig, SurrogateLabels,
    TypeImportance,
};
use crate::encoders::{
    edge_type_pairs, graph_norm, observed_adjacency, project_features, rgcn_forward, MlpParams, NormParams,
    RgcnParams,
};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, HeteroGraph, SplitKind};
use crate::hgsl::{init_edge_logits, refine, sample_gumbel_noise, zero_noise, EdgeGate, EdgeLogits, GumbelConfig};
use crate::knn::{knn_adjacency, knn_edge_types, KnnConfig};
use crate::numerics::{check_param_gradients, Bound, Gradients, Matrix, ParamId, ParamStore, Tape, Var, DEFAULT_EPS};

/// RNG stream for parameter initialization.
const INIT_STREAM: u64 = 0;
/// RNG stream for Gumbel noise.
const NOISE_STREAM: u64 = 1;
/// RNG stream for the pretraining stage.
pub const PRETRAIN_STREAM: u64 = 2;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MacroF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hgul,
    Rgcn,
    Gcn,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub disable_knn: bool,
    pub disable_gsl: bool,
    pub disable_affinity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Shared hidden width `d`.
    pub hidden_dim: usize,
    /// Message-passing layers.
    pub layers: usize,
    pub knn: KnnConfig,
    pub gumbel: GumbelConfig,
    pub ppr: PprConfig,
    pub ablation: Ablation,
    pub metric: Metric,
    pub pretrain_epochs: usize,
    /// Keep the type-pair importance `R` at its all-ones initialization.
    pub freeze_importance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Hgul,
            gamma: 0.1,
            lr: 5e-3,
            weight_decay: 0.0,
            epochs: 100,
            seed: 0,
            hidden_dim: 64,
            layers: 1,
            knn: KnnConfig::default(),
            gumbel: GumbelConfig::default(),
            ppr: PprConfig::default(),
            ablation: Ablation::default(),
            metric: Metric::Accuracy,
            pretrain_epochs: 200,
            freeze_importance: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be finite and >= 0", self.gamma));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.hidden_dim == 0 || self.layers == 0 {
            return bad("hidden_dim and layers must be at least 1".into());
        }
        self.knn.validate()?;
        self.gumbel.validate()?;
        self.ppr.validate()
    }
}

/// Per-parameter first and second moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
}

impl AdamState {
    pub fn zeros(shape: (usize, usize)) -> Self {
        AdamState {
            m: Matrix::zeros(shape.0, shape.1),
            v: Matrix::zeros(shape.0, shape.1),
        }
    }
}

/// One Adam update at step `t` (1-based), with the weight decay applied
/// directly to the parameter as `lr · wd · p`.
pub fn adam_step(param: &mut Matrix, grad: &Matrix, state: &mut AdamState, t: usize, lr: f64, wd: f64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= lr * wd * param[i] + lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Adam over a whole [`ParamStore`]. Frozen parameters and parameters that
/// received no gradient are left alone.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    t: usize,
    states: Vec<Option<AdamState>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            t: 0,
            states: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, bound: &Bound, grads: &Gradients) {
        self.t += 1;
        self.states.resize(store.len(), None);
        let ids: Vec<ParamId> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            if store.is_frozen(id) {
                continue;
            }
            let Some(g) = grads.get(bound[id]) else { continue };
            let p = store.get_mut(id);
            let state = self.states[slot].get_or_insert_with(|| AdamState::zeros(p.shape()));
            adam_step(p, g, state, self.t, self.lr, self.weight_decay);
        }
    }
}

/// Index of the largest entry of each row; ties go to the smaller index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for k in 1..r.len() {
                if r[k] > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Accuracy or macro-F1 over the rows selected by `mask`. Classes that
/// neither occur nor are predicted within the mask score F1 = 0.
pub fn evaluate(logits: &Matrix, labels: &[usize], mask: &[bool], metric: Metric) -> Result<f64> {
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptyMask("evaluate"));
    }
    let pred = argmax_rows(logits);
    match metric {
        Metric::Accuracy => Ok(rows.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / rows.len() as f64),
        Metric::MacroF1 => {
            let c = logits.ncols();
            let mut tp = vec![0usize; c];
            let mut fp = vec![0usize; c];
            let mut fneg = vec![0usize; c];
            for &i in &rows {
                if pred[i] == labels[i] {
                    tp[pred[i]] += 1;
                } else {
                    fp[pred[i]] += 1;
                    fneg[labels[i]] += 1;
                }
            }
            let f1: f64 = (0..c)
                .map(|k| {
                    let denom = 2 * tp[k] + fp[k] + fneg[k];
                    if denom == 0 {
                        0.0
                    } else {
                        2.0 * tp[k] as f64 / denom as f64
                    }
                })
                .sum();
            Ok(f1 / c as f64)
        }
    }
}

/// `GraphNorm(h_struct + h_knn)`; a missing path contributes nothing.
pub fn combine_paths(
    tape: &mut Tape,
    bound: &Bound,
    h_struct: Option<Var>,
    h_knn: Option<Var>,
    norm: &NormParams,
) -> Result<Var> {
    let h = match (h_struct, h_knn) {
        (Some(a), Some(b)) => tape.add(a, b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return Err(Error::Config("both representation paths are disabled".into())),
    };
    graph_norm(tape, bound, h, norm)
}

/// `L_task + γ L_reg`.
pub fn total_loss(tape: &mut Tape, l_task: Var, l_reg: Var, gamma: f64) -> Result<Var> {
    let r = tape.scale(l_reg, gamma);
    tape.add(l_task, r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_task: f64,
    pub l_reg: f64,
    pub loss: f64,
    pub tau: f64,
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Observed edges kept by the sampled mask (all edges when the structure
    /// path is off).
    pub kept_edges: usize,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Test metric at the best validation epoch.
    pub test_at_best: f64,
    pub final_test: f64,
    /// Training steps whose refined adjacency had an entry outside the
    /// observed support. Always 0 unless something is broken.
    pub support_violations: usize,
    #[serde(skip)]
    pub pretrain_seconds: f64,
}

#[derive(Debug, Clone, Copy)]
struct ClassifierParams {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct GcnParams {
    projection: Vec<ParamId>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    /// Blocks `Â[t, s]` of the normalized full adjacency.
    blocks: Vec<Vec<Matrix>>,
}

#[derive(Debug, Clone)]
struct HgulParams {
    mlp: MlpParams,
    knn_encoder: Option<RgcnParams>,
    struct_encoder: RgcnParams,
    logits: Option<EdgeLogits>,
    norm: NormParams,
    affinity: Option<(TypeImportance, GateParams, SurrogateLabels)>,
}

/// Parameters and fixed inputs of one training run.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: TrainConfig,
    pub store: ParamStore,
    hgul: Option<HgulParams>,
    rgcn: Option<RgcnParams>,
    gcn: Option<GcnParams>,
    classifier: ClassifierParams,
}

/// Result of one forward pass.
pub struct Forward {
    pub logits: Var,
    pub l_reg: Var,
    pub kept_edges: usize,
    pub support_ok: bool,
}

enum Noise<'a> {
    Sampled(&'a [Matrix]),
    Off,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Model {
    pub fn new(graph: &HeteroGraph, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, INIT_STREAM);
        let mut store = ParamStore::new();
        let d = cfg.hidden_dim;
        let dims: Vec<usize> = graph.node_types().iter().map(|t| t.dim()).collect();
        let c = graph.num_classes();
        let (mut hgul, mut rgcn, mut gcn) = (None, None, None);
        match cfg.model {
            ModelKind::Hgul => {
                let ab = cfg.ablation;
                let mlp = MlpParams::new(&mut store, "proj", &dims, d, &mut rng);
                let knn_encoder = (!ab.disable_knn).then(|| {
                    let in_d = vec![d; dims.len()];
                    RgcnParams::new(&mut store, "knn", &in_d, &knn_edge_types(graph), d, cfg.layers, &mut rng)
                });
                let struct_encoder =
                    RgcnParams::new(&mut store, "struct", &dims, &edge_type_pairs(graph), d, cfg.layers, &mut rng);
                let logits = if ab.disable_gsl {
                    None
                } else {
                    let projected = {
                        let mut tape = Tape::new();
                        let bound = store.bind(&mut tape);
                        let raw = raw_features(&mut tape, graph);
                        let p = project_features(&mut tape, &bound, &mlp, &raw)?;
                        p.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
                    };
                    Some(init_edge_logits(&mut store, graph, &projected))
                };
                let norm = NormParams::new(&mut store, "norm", d);
                let affinity = if ab.disable_affinity {
                    None
                } else {
                    let importance = TypeImportance::new(&mut store, dims.len());
                    store.set_frozen(importance.r, cfg.freeze_importance);
                    let gate = GateParams::new(&mut store, "gate", d, &mut rng);
                    let surrogate = pretrain_predict(graph, &pretrain_config(cfg))?;
                    Some((importance, gate, surrogate))
                };
                hgul = Some(HgulParams {
                    mlp,
                    knn_encoder,
                    struct_encoder,
                    logits,
                    norm,
                    affinity,
                });
            }
            ModelKind::Rgcn => {
                rgcn = Some(RgcnParams::new(&mut store, "rgcn", &dims, &edge_type_pairs(graph), d, cfg.layers, &mut rng));
            }
            ModelKind::Gcn => {
                let projection = dims
                    .iter()
                    .enumerate()
                    .map(|(t, &dt)| store.add_uniform(format!("gcn.proj{t}"), dt, d, dt, &mut rng))
                    .collect();
                let weights = (0..cfg.layers)
                    .map(|l| store.add_uniform(format!("gcn.{l}.w"), d, d, d, &mut rng))
                    .collect();
                let biases = (0..cfg.layers)
                    .map(|l| store.add_uniform(format!("gcn.{l}.b"), 1, d, d, &mut rng))
                    .collect();
                let a_hat = normalize_adjacency(&graph.full_adjacency())?;
                let (off, n) = (graph.offsets(), graph.counts());
                let blocks = (0..n.len())
                    .map(|t| {
                        (0..n.len())
                            .map(|s| a_hat.view((off[t], off[s]), (n[t], n[s])).into_owned())
                            .collect()
                    })
                    .collect();
                gcn = Some(GcnParams {
                    projection,
                    weights,
                    biases,
                    blocks,
                });
            }
        }
        let classifier = ClassifierParams {
            w: store.add_uniform("cls.w", d, c, d, &mut rng),
            b: store.add_uniform("cls.b", 1, c, d, &mut rng),
        };
        Ok(Model {
            cfg: cfg.clone(),
            store,
            hgul,
            rgcn,
            gcn,
            classifier,
        })
    }

    /// Surrogate labels used by the affinity path, if it is enabled.
    pub fn surrogate(&self) -> Option<&SurrogateLabels> {
        self.hgul.as_ref().and_then(|h| h.affinity.as_ref()).map(|a| &a.2)
    }

    pub fn edge_logits(&self) -> Option<&EdgeLogits> {
        self.hgul.as_ref().and_then(|h| h.logits.as_ref())
    }

    /// Forward pass with explicit Gumbel noise (or none) at temperature `tau`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        graph: &HeteroGraph,
        noise: Option<&[Matrix]>,
        tau: f64,
        gate: EdgeGate,
    ) -> Result<Forward> {
        let noise = match noise {
            Some(n) => Noise::Sampled(n),
            None => Noise::Off,
        };
        let t = graph.target_type();
        let raw = raw_features(tape, graph);
        let mut l_reg = None;
        let mut kept_edges = graph.num_edges();
        let mut support_ok = true;
        let h = if let Some(p) = &self.hgul {
            let projected = project_features(tape, bound, &p.mlp, &raw)?;
            let h_knn = match &p.knn_encoder {
                Some(enc) => {
                    let adj = knn_adjacency(tape, graph, &projected, &self.cfg.knn)?;
                    Some(rgcn_forward(tape, bound, enc, &projected, &adj)?[t])
                }
                None => None,
            };
            let h_struct = match &p.logits {
                Some(logits) => {
                    let zeros;
                    let n = match noise {
                        Noise::Sampled(n) => n,
                        Noise::Off => {
                            zeros = zero_noise(graph);
                            &zeros[..]
                        }
                    };
                    let rg = refine(tape, bound, graph, logits, n, tau, self.cfg.gumbel.delta, gate)?;
                    kept_edges = rg.kept();
                    support_ok = support_within_observed(tape, graph, &rg.adjacency);
                    l_reg = Some(rg.reg);
                    rgcn_forward(tape, bound, &p.struct_encoder, &raw, &rg.adjacency)?[t]
                }
                None => {
                    let adj = observed_adjacency(tape, graph);
                    rgcn_forward(tape, bound, &p.struct_encoder, &raw, &adj)?[t]
                }
            };
            let mut h = combine_paths(tape, bound, Some(h_struct), h_knn, &p.norm)?;
            if let Some((imp, gp, surrogate)) = &p.affinity {
                let c_hat = hetero_affinity(tape, graph, bound[imp.r], &surrogate.probs, &self.cfg.ppr)?;
                let h_aff = affinity_features(tape, c_hat, &surrogate.probs, h)?;
                h = crate::affinity::gate_fuse(tape, bound, h, h_aff, gp)?;
            }
            h
        } else if let Some(enc) = &self.rgcn {
            let adj = observed_adjacency(tape, graph);
            let h = rgcn_forward(tape, bound, enc, &raw, &adj)?[t];
            tape.relu(h)
        } else if let Some(g) = &self.gcn {
            gcn_forward(tape, bound, g, &raw, t)?
        } else {
            unreachable!("model has no encoder")
        };
        let z = tape.matmul(h, bound[self.classifier.w])?;
        let logits = tape.add_row(z, bound[self.classifier.b])?;
        let l_reg = match l_reg {
            Some(v) => v,
            None => tape.constant(Matrix::zeros(1, 1)),
        };
        Ok(Forward {
            logits,
            l_reg,
            kept_edges,
            support_ok,
        })
    }
}

fn pretrain_config(cfg: &TrainConfig) -> PretrainConfig {
    PretrainConfig {
        epochs: cfg.pretrain_epochs,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        hidden: cfg.hidden_dim,
        depth: cfg.layers,
        seed: cfg.seed,
    }
}

fn raw_features(tape: &mut Tape, graph: &HeteroGraph) -> Vec<Var> {
    graph
        .node_types()
        .iter()
        .map(|nt| tape.constant(nt.features.clone()))
        .collect()
}

fn support_within_observed(tape: &Tape, graph: &HeteroGraph, adjacency: &[crate::encoders::RelationAdjacency]) -> bool {
    graph
        .edge_type_adjacency()
        .iter()
        .zip(adjacency)
        .all(|(obs, ra)| obs.iter().zip(tape.value(ra.adj).iter()).all(|(&o, &a)| o != 0.0 || a == 0.0))
}

fn gcn_forward(tape: &mut Tape, bound: &Bound, g: &GcnParams, raw: &[Var], target: usize) -> Result<Var> {
    let mut h: Vec<Var> = raw
        .iter()
        .zip(&g.projection)
        .map(|(&x, &p)| tape.matmul(x, bound[p]))
        .collect::<Result<_>>()?;
    for (l, (&w, &b)) in g.weights.iter().zip(&g.biases).enumerate() {
        let hw: Vec<Var> = h.iter().map(|&x| tape.matmul(x, bound[w])).collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(h.len());
        for row in &g.blocks {
            let mut acc: Option<Var> = None;
            for (s, block) in row.iter().enumerate() {
                if block.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let a = tape.constant(block.clone());
                let m = tape.matmul(a, hw[s])?;
                acc = Some(match acc {
                    Some(x) => tape.add(x, m)?,
                    None => m,
                });
            }
            let out = acc.expect("self-loops keep every diagonal block nonzero");
            next.push(tape.add_row(out, bound[b])?);
        }
        h = next;
        if l + 1 < g.weights.len() {
            h = h.into_iter().map(|x| tape.relu(x)).collect();
        }
    }
    Ok(tape.relu(h[target]))
}

/// Trains one model and records every epoch.
pub fn train(graph: &HeteroGraph, cfg: &TrainConfig) -> Result<Metrics> {
    train_model(graph, cfg).map(|(m, _)| m)
}

/// Like [`train`] but also returns the trained model.
pub fn train_model(graph: &HeteroGraph, cfg: &TrainConfig) -> Result<(Metrics, Model)> {
    let pre_start = Instant::now();
    let mut model = Model::new(graph, cfg)?;
    let pretrain_seconds = pre_start.elapsed().as_secs_f64();

    let t = graph.target_type();
    let n_t = graph.counts()[t];
    let split = graph.split();
    let masks = [SplitKind::Train, SplitKind::Val, SplitKind::Test].map(|k| split.mask(k, n_t));
    let mut noise_rng = stream_rng(cfg.seed, NOISE_STREAM);
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut support_violations = 0;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let tau = cfg.gumbel.temperature(epoch);
        let noise = model.edge_logits().map(|_| sample_gumbel_noise(graph, &mut noise_rng));

        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bound, graph, noise.as_deref(), tau, EdgeGate::Hard)?;
        if !fwd.support_ok {
            support_violations += 1;
        }
        let l_task = tape.cross_entropy(fwd.logits, graph.labels(), &masks[0])?;
        let loss = total_loss(&mut tape, l_task, fwd.l_reg, cfg.gamma)?;
        let (lt, lr, l) = (tape.scalar(l_task), tape.scalar(fwd.l_reg), tape.scalar(loss));
        if !l.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let grads = tape.backward(loss);
        adam.step(&mut model.store, &bound, &grads);

        let logits = eval_logits(&model, graph, tau)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        let score = |m: &[bool]| evaluate(&logits, graph.labels(), m, cfg.metric);
        let (train, val) = (score(&masks[0])?, score_or_nan(&masks[1], &score)?);
        let test = score_or_nan(&masks[2], &score)?;
        records.push(EpochRecord {
            epoch,
            l_task: lt,
            l_reg: lr,
            loss: l,
            tau,
            train,
            val,
            test,
            kept_edges: fwd.kept_edges,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.val > records[best].val {
            best = i;
        }
    }
    let metrics = Metrics {
        best_epoch: records[best].epoch,
        best_val: records[best].val,
        test_at_best: records[best].test,
        final_test: records.last().map_or(f64::NAN, |r| r.test),
        epochs: records,
        support_violations,
        pretrain_seconds,
    };
    Ok((metrics, model))
}

fn score_or_nan(mask: &[bool], score: &impl Fn(&[bool]) -> Result<f64>) -> Result<f64> {
    if mask.iter().any(|&b| b) {
        score(mask)
    } else {
        Ok(f64::NAN)
    }
}

/// Target-type logits with the Gumbel noise switched off.
pub fn eval_logits(model: &Model, graph: &HeteroGraph, tau: f64) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bound, graph, None, tau, EdgeGate::Hard)?;
    Ok(tape.value(fwd.logits).clone())
}

/// Central-difference check of the full training loss with the Gumbel noise
/// frozen. Returns the worst relative error over the non-logit parameters
/// (hard gate) and over the edge logits. The hard gate is piecewise constant
/// in the logits, so those are probed through the soft-gate surrogate.
pub fn frozen_noise_gradient_check(graph: &HeteroGraph, cfg: &TrainConfig, noise_seed: u64, tau: f64) -> Result<(f64, f64)> {
    let model = Model::new(graph, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = sample_gumbel_noise(graph, &mut rng);
    let mask = graph.split().mask(SplitKind::Train, graph.counts()[graph.target_type()]);
    let logit_ids: Vec<ParamId> = model.edge_logits().map(|l| l.per_relation.clone()).unwrap_or_default();
    let others: Vec<ParamId> = model
        .store
        .ids()
        .filter(|id| !logit_ids.contains(id) && !model.store.is_frozen(*id))
        .collect();
    let loss = |gate: EdgeGate| {
        let (model, noise, mask) = (&model, &noise, &mask);
        move |t: &mut Tape, b: &Bound| {
            let f = model.forward(t, b, graph, Some(noise), tau, gate)?;
            let l = t.cross_entropy(f.logits, graph.labels(), mask)?;
            total_loss(t, l, f.l_reg, cfg.gamma)
        }
    };
    let hard = check_param_gradients(&model.store, Some(&others), DEFAULT_EPS, loss(EdgeGate::Hard))?;
    let soft = if logit_ids.is_empty() {
        0.0
    } else {
        check_param_gradients(&model.store, Some(&logit_ids), DEFAULT_EPS, loss(EdgeGate::Soft))?
    };
    Ok((hard, soft))
}
