//! Seeded generator of heterogeneous graphs with a homophily knob.
//!
//! Every node (of every type) draws a latent class. Features are Gaussian
//! around a per-type, per-class center; each relation links a pair with
//! probability `p_intra` when the latent classes agree and `p_inter`
//! otherwise. Only target-type classes are exposed as labels.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HeteroGraph, MetaRelation, NodeType, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticType {
    pub name: String,
    pub count: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRelation {
    pub src_type: String,
    pub name: String,
    pub dst_type: String,
    pub p_intra: f64,
    pub p_inter: f64,
    #[serde(default = "yes")]
    pub is_symmetric: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub node_types: Vec<SyntheticType>,
    pub target_type: String,
    pub num_classes: usize,
    /// Norm of each class center.
    pub class_separation: f64,
    /// Standard deviation of the per-feature Gaussian noise.
    pub feature_noise: f64,
    pub relations: Vec<SyntheticRelation>,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Three node types (`paper`, `author`, `subject`) with paper as target.
    ///
    /// `p_intra`/`p_inter` apply to every relation; the cross-type relations
    /// are scaled so the expected degree stays comparable across types.
    pub fn academic(n_paper: usize, n_author: usize, n_subject: usize, p_intra: f64, p_inter: f64) -> Self {
        let rel = |src: &str, name: &str, dst: &str, scale: f64| SyntheticRelation {
            src_type: src.into(),
            name: name.into(),
            dst_type: dst.into(),
            p_intra: (p_intra * scale).min(1.0),
            p_inter: (p_inter * scale).min(1.0),
            is_symmetric: true,
        };
        SyntheticConfig {
            node_types: vec![
                SyntheticType { name: "paper".into(), count: n_paper, dim: 16 },
                SyntheticType { name: "author".into(), count: n_author, dim: 8 },
                SyntheticType { name: "subject".into(), count: n_subject, dim: 4 },
            ],
            target_type: "paper".into(),
            num_classes: 3,
            class_separation: 1.5,
            feature_noise: 1.0,
            relations: vec![
                rel("paper", "cites", "paper", 1.0),
                rel("paper", "written_by", "author", 1.0),
                rel("paper", "about", "subject", 1.0),
            ],
            train_fraction: 0.2,
            val_fraction: 0.2,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        let Some(target) = self.node_types.iter().find(|t| t.name == self.target_type) else {
            return bad(format!("unknown target type `{}`", self.target_type));
        };
        if target.count == 0 {
            return bad(format!("target type `{}` has zero nodes", self.target_type));
        }
        if target.count < self.num_classes {
            return bad("target type needs at least one node per class".into());
        }
        for t in &self.node_types {
            if t.dim == 0 {
                return bad(format!("node type `{}` has dim 0", t.name));
            }
        }
        for r in &self.relations {
            for (p, name) in [(r.p_intra, "p_intra"), (r.p_inter, "p_inter")] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("relation `{}`: {name} = {p} outside [0, 1]", r.name));
                }
            }
            for t in [&r.src_type, &r.dst_type] {
                if !self.node_types.iter().any(|nt| &nt.name == t) {
                    return bad(format!("relation `{}` references unknown type `{t}`", r.name));
                }
            }
        }
        let f = self.train_fraction + self.val_fraction;
        if !(self.train_fraction > 0.0 && self.val_fraction >= 0.0 && f <= 1.0) {
            return bad("train/val fractions must be positive and sum to at most 1".into());
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<HeteroGraph> {
    generate_synthetic_with_latent(cfg).map(|(g, _)| g)
}

/// Like [`generate_synthetic`] but also returns the latent class of every
/// node, per type in declaration order.
pub fn generate_synthetic_with_latent(cfg: &SyntheticConfig) -> Result<(HeteroGraph, Vec<Vec<usize>>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.num_classes;

    let mut latent = Vec::with_capacity(cfg.node_types.len());
    let mut node_types = Vec::with_capacity(cfg.node_types.len());
    for t in &cfg.node_types {
        let mut classes: Vec<usize> = (0..t.count).map(|i| i % c).collect();
        classes.shuffle(&mut rng);

        let centers: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                let v: Vec<f64> = (0..t.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm * cfg.class_separation).collect()
            })
            .collect();
        let mut features = DMatrix::zeros(t.count, t.dim);
        for (i, &k) in classes.iter().enumerate() {
            for j in 0..t.dim {
                let noise: f64 = rng.sample(StandardNormal);
                features[(i, j)] = centers[k][j] + cfg.feature_noise * noise;
            }
        }
        node_types.push(NodeType {
            name: t.name.clone(),
            features,
        });
        latent.push(classes);
    }

    let idx = |name: &str| cfg.node_types.iter().position(|t| t.name == name).unwrap();
    let mut relations = Vec::with_capacity(cfg.relations.len());
    for r in &cfg.relations {
        let (s, d) = (idx(&r.src_type), idx(&r.dst_type));
        let (ns, nd) = (cfg.node_types[s].count, cfg.node_types[d].count);
        let mut edges = Vec::new();
        for u in 0..ns {
            for v in 0..nd {
                if s == d && (u == v || (r.is_symmetric && v < u)) {
                    continue;
                }
                let p = if latent[s][u] == latent[d][v] { r.p_intra } else { r.p_inter };
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        relations.push(MetaRelation {
            src_type: r.src_type.clone(),
            name: r.name.clone(),
            dst_type: r.dst_type.clone(),
            edges,
            is_symmetric: r.is_symmetric,
        });
    }

    let target = idx(&cfg.target_type);
    let labels = latent[target].clone();
    let split = stratified_split(&labels, c, cfg.train_fraction, cfg.val_fraction, &mut rng);
    let graph = HeteroGraph::new(node_types, relations, &cfg.target_type, labels, split)?;
    Ok((graph, latent))
}

fn stratified_split(labels: &[usize], c: usize, train: f64, val: f64, rng: &mut ChaCha8Rng) -> Split {
    let mut split = Split::default();
    for k in 0..c {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        members.shuffle(rng);
        let n = members.len();
        let n_train = ((train * n as f64).round() as usize).clamp(1, n);
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}
