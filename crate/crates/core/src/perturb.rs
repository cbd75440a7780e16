//! Schema-preserving structural noise.
//!
//! At rate `p`, each relation with `m` edges loses `⌊p f m⌋` uniformly chosen
//! edges and gains `⌊p (1 − f) m⌋` uniformly chosen non-edges between nodes
//! of the relation's declared endpoint types, where `f` is the removal
//! fraction. Node sets, features, labels and splits are untouched.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, MetaRelation};
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub rate: f64,
    pub seed: u64,
    /// Share of the perturbation budget spent on removals.
    pub removal_fraction: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            rate: 0.0,
            seed: 0,
            removal_fraction: 0.5,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!("perturbation rate {} outside [0, 1]", self.rate)));
        }
        if !(0.0..=1.0).contains(&self.removal_fraction) {
            return Err(Error::Config(format!(
                "removal_fraction {} outside [0, 1]",
                self.removal_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationReport {
    pub relation: String,
    pub original: usize,
    pub removed: usize,
    pub requested_additions: usize,
    pub added: usize,
    /// Additions that could not be made because the relation ran out of
    /// non-edges.
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub relations: Vec<RelationReport>,
}

/// Candidate pair space of a relation.
struct PairSpace {
    ns: usize,
    nd: usize,
    same_type: bool,
    symmetric: bool,
}

impl PairSpace {
    fn size(&self) -> usize {
        match (self.same_type, self.symmetric) {
            (true, true) => self.ns * self.ns.saturating_sub(1) / 2,
            (true, false) => self.ns * self.ns.saturating_sub(1),
            _ => self.ns * self.nd,
        }
    }

    /// Canonical key so both orientations of a symmetric same-type pair
    /// collide.
    fn key(&self, (u, v): (usize, usize)) -> (usize, usize) {
        if self.same_type && self.symmetric && v < u {
            (v, u)
        } else {
            (u, v)
        }
    }

    fn random<R: Rng>(&self, rng: &mut R) -> Option<(usize, usize)> {
        let u = rng.random_range(0..self.ns);
        let v = rng.random_range(0..self.nd);
        if self.same_type && u == v {
            return None;
        }
        Some(self.key((u, v)))
    }

    fn all(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ns).flat_map(move |u| {
            (0..self.nd).filter_map(move |v| {
                let skip = self.same_type && (u == v || (self.symmetric && v < u));
                (!skip).then_some((u, v))
            })
        })
    }
}

/// Perturbs every relation of `graph`; see the module docs for the counts.
pub fn perturb_graph(graph: &HeteroGraph, cfg: &PerturbConfig) -> Result<(HeteroGraph, PerturbReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts = graph.counts();
    let mut relations = Vec::with_capacity(graph.relations().len());
    let mut reports = Vec::with_capacity(graph.relations().len());
    for r in graph.relations() {
        let s = graph.type_index(&r.src_type).unwrap();
        let d = graph.type_index(&r.dst_type).unwrap();
        let space = PairSpace {
            ns: counts[s],
            nd: counts[d],
            same_type: s == d,
            symmetric: r.is_symmetric,
        };
        let m = r.edges.len();
        let n_remove = (cfg.rate * cfg.removal_fraction * m as f64).floor() as usize;
        let n_add = (cfg.rate * (1.0 - cfg.removal_fraction) * m as f64).floor() as usize;

        let removed: HashSet<usize> = sample(&mut rng, m, n_remove.min(m)).into_iter().collect();
        let mut edges: Vec<(usize, usize)> = r
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, &e)| e)
            .collect();

        // every original edge, removed or not, is off limits
        let existing: HashSet<(usize, usize)> = r.edges.iter().map(|&e| space.key(e)).collect();
        let available = space.size().saturating_sub(existing.len());
        let added = if n_add == 0 {
            Vec::new()
        } else if available <= 4 * n_add {
            let pool: Vec<(usize, usize)> = space.all().filter(|p| !existing.contains(p)).collect();
            let take = n_add.min(pool.len());
            sample(&mut rng, pool.len(), take).into_iter().map(|i| pool[i]).collect()
        } else {
            let mut taken = HashSet::with_capacity(n_add);
            let mut out = Vec::with_capacity(n_add);
            while out.len() < n_add {
                let Some(p) = space.random(&mut rng) else { continue };
                if !existing.contains(&p) && taken.insert(p) {
                    out.push(p);
                }
            }
            out
        };
        reports.push(RelationReport {
            relation: r.name.clone(),
            original: m,
            removed: n_remove.min(m),
            requested_additions: n_add,
            added: added.len(),
            shortfall: n_add - added.len(),
        });
        edges.extend(added);
        relations.push(MetaRelation {
            edges,
            ..r.clone()
        });
    }
    Ok((graph.with_relations(relations)?, PerturbReport { relations: reports }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub rate: f64,
    pub model: String,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rate: f64,
    pub model: String,
    pub repeat: usize,
    pub score: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every `(rate, model, repeat)` combination and aggregates the
/// best-validation test metric per `(rate, model)`. Repeat `i` perturbs
/// with seed `perturb_seed + i` (shared by all models) and trains with
/// seed `cfg.seed + i`. Cells run in parallel on the current rayon pool.
pub fn robustness_sweep(
    graph: &HeteroGraph,
    rates: &[f64],
    models: &[(String, TrainConfig)],
    repeats: usize,
    perturb: &PerturbConfig,
) -> Result<(Vec<CurveRow>, Vec<SweepCell>)> {
    if rates.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("rates must be sorted ascending".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..rates.len())
        .flat_map(|ri| (0..models.len()).flat_map(move |mi| (0..repeats).map(move |k| (ri, mi, k))))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(ri, mi, k)| {
            let pc = PerturbConfig {
                rate: rates[ri],
                seed: perturb.seed + k as u64,
                ..*perturb
            };
            let (g, _) = perturb_graph(graph, &pc)?;
            let (name, cfg) = &models[mi];
            let cfg = TrainConfig {
                seed: cfg.seed + k as u64,
                ..cfg.clone()
            };
            let m = train(&g, &cfg)?;
            Ok(SweepCell {
                rate: rates[ri],
                model: name.clone(),
                repeat: k,
                score: m.test_at_best,
            })
        })
        .collect::<Result<_>>()?;
    let rows = cells
        .chunks(repeats)
        .map(|chunk| {
            let scores: Vec<f64> = chunk.iter().map(|c| c.score).collect();
            let (mean, std) = mean_std(&scores);
            CurveRow {
                rate: chunk[0].rate,
                model: chunk[0].model.clone(),
                mean,
                std,
                repeats,
            }
        })
        .collect();
    Ok((rows, cells))
}
