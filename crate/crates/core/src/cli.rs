//! Command-line experiment runner.
//!
//! Every command reads a flat TOML config, applies `--set key=value`
//! overrides on top, and writes its results under `--out`. Each result file
//! carries the fully resolved config: JSON files under a `config` key, CSV
//! files as leading `#` comment lines.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::PprConfig;
use crate::graph::{
    edge_homophily, generate_synthetic, load_graph, save_graph, HeteroGraph, SyntheticConfig,
};
use crate::hgsl::GumbelConfig;
use crate::knn::{KnnConfig, KnnDirection};
use crate::perturb::{perturb_graph, robustness_sweep, PerturbConfig, PerturbReport};
use crate::spectral::{
    block_classes, build_block_laplacian, class_signal, cross_dirichlet, schur_complement,
    spectral_energy, verify_decomposition, weyl_bound_check,
};
use crate::trainer::{train, Ablation, EpochRecord, Metric, Metrics, ModelKind, TrainConfig};
use crate::{Error, Result};

/// Environment variable selecting the worker-pool size.
pub const WORKERS_ENV: &str = "HGUL_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "hgul", version, about = "Robust node classification on heterogeneous graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write per-epoch metrics plus a summary.
    Train(CommonArgs),
    /// Full model and its three single-component ablations.
    Ablate(CommonArgs),
    /// Sensitivity grid over kNN k, threshold delta and gamma.
    Sweep(CommonArgs),
    /// Accuracy-versus-perturbation-rate curves for several models.
    Robustness(CommonArgs),
    /// Spectral energy profile and block diagnostics of a two-type graph.
    Spectral(CommonArgs),
    /// Write a synthetic graph file.
    Generate(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Train(a)
            | Command::Ablate(a)
            | Command::Sweep(a)
            | Command::Robustness(a)
            | Command::Spectral(a)
            | Command::Generate(a) => a,
        }
    }
}

/// Resolved run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Graph file; when absent a synthetic academic graph is generated.
    pub graph: Option<String>,
    pub n_paper: usize,
    pub n_author: usize,
    pub n_subject: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub class_separation: f64,
    pub feature_noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub graph_seed: u64,

    pub model: ModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub hidden_dim: usize,
    pub layers: usize,
    pub metric: Metric,
    pub pretrain_epochs: usize,
    pub freeze_importance: bool,
    pub knn_k: usize,
    pub knn_direction: KnnDirection,
    pub knn_keep_negative: bool,
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_decay: f64,
    pub delta: f64,
    pub ppr_alpha: f64,
    pub ppr_k_iter: usize,
    pub ppr_tol: f64,
    pub disable_knn: bool,
    pub disable_gsl: bool,
    pub disable_affinity: bool,

    /// Perturbation applied to the input graph before training or analysis.
    pub perturb_rate: f64,
    pub perturb_seed: u64,
    pub removal_fraction: f64,

    pub rates: Vec<f64>,
    pub repeats: usize,
    /// Model names for `robustness`: `hgul`, `rgcn`, `gcn`, `hgul_no_knn`,
    /// `hgul_no_gsl`, `hgul_no_affinity`.
    pub models: Vec<String>,

    pub sweep_k: Vec<usize>,
    pub sweep_delta: Vec<f64>,
    pub sweep_gamma: Vec<f64>,

    pub spectral_type1: String,
    pub spectral_type2: String,
    pub spectral_class: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SyntheticConfig::academic(400, 150, 50, 0.05, 0.005);
        RunConfig {
            graph: None,
            n_paper: 400,
            n_author: 150,
            n_subject: 50,
            p_intra: 0.05,
            p_inter: 0.005,
            class_separation: s.class_separation,
            feature_noise: s.feature_noise,
            train_fraction: s.train_fraction,
            val_fraction: s.val_fraction,
            graph_seed: 0,
            model: t.model,
            seed: t.seed,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            gamma: t.gamma,
            hidden_dim: t.hidden_dim,
            layers: t.layers,
            metric: t.metric,
            pretrain_epochs: t.pretrain_epochs,
            freeze_importance: t.freeze_importance,
            knn_k: t.knn.k,
            knn_direction: t.knn.direction,
            knn_keep_negative: t.knn.keep_negative,
            tau0: t.gumbel.tau0,
            tau_min: t.gumbel.tau_min,
            tau_decay: t.gumbel.decay,
            delta: t.gumbel.delta,
            ppr_alpha: t.ppr.alpha,
            ppr_k_iter: t.ppr.k_iter,
            ppr_tol: t.ppr.tol,
            disable_knn: false,
            disable_gsl: false,
            disable_affinity: false,
            perturb_rate: 0.0,
            perturb_seed: 0,
            removal_fraction: PerturbConfig::default().removal_fraction,
            rates: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            repeats: 5,
            models: vec!["hgul".into(), "rgcn".into()],
            sweep_k: vec![2, 4, 8, 16],
            sweep_delta: vec![0.3, 0.5, 0.7],
            sweep_gamma: vec![0.0, 0.1, 1.0],
            spectral_type1: "paper".into(),
            spectral_type2: "author".into(),
            spectral_class: 0,
        }
    }
}

impl RunConfig {
    /// Layer `overrides` (`key=value`) over the file contents over defaults.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match file {
            Some(text) => toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let value = value.trim();
            // Bare words that are not valid TOML values are taken as strings.
            let parsed: toml::Table = toml::from_str(&format!("{key} = {value}"))
                .or_else(|_| toml::from_str(&format!("{key} = {}", toml::Value::from(value))))
                .map_err(|e| Error::Config(format!("override `{item}`: {e}")))?;
            table.extend(parsed);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train_config().validate()?;
        cfg.perturb_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(fs::read_to_string(p)?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    /// The config as TOML text, as echoed into result files.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model,
            gamma: self.gamma,
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            seed: self.seed,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            knn: KnnConfig {
                k: self.knn_k,
                direction: self.knn_direction,
                keep_negative: self.knn_keep_negative,
            },
            gumbel: GumbelConfig {
                tau0: self.tau0,
                tau_min: self.tau_min,
                decay: self.tau_decay,
                delta: self.delta,
            },
            ppr: PprConfig {
                alpha: self.ppr_alpha,
                k_iter: self.ppr_k_iter,
                tol: self.ppr_tol,
            },
            ablation: Ablation {
                disable_knn: self.disable_knn,
                disable_gsl: self.disable_gsl,
                disable_affinity: self.disable_affinity,
            },
            metric: self.metric,
            pretrain_epochs: self.pretrain_epochs,
            freeze_importance: self.freeze_importance,
        }
    }

    pub fn perturb_config(&self) -> PerturbConfig {
        PerturbConfig {
            rate: self.perturb_rate,
            seed: self.perturb_seed,
            removal_fraction: self.removal_fraction,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let mut s = SyntheticConfig::academic(self.n_paper, self.n_author, self.n_subject, self.p_intra, self.p_inter);
        s.class_separation = self.class_separation;
        s.feature_noise = self.feature_noise;
        s.train_fraction = self.train_fraction;
        s.val_fraction = self.val_fraction;
        s.seed = self.graph_seed;
        s
    }

    /// Load or generate the clean input graph.
    pub fn base_graph(&self) -> Result<HeteroGraph> {
        match &self.graph {
            Some(path) => load_graph(path),
            None => generate_synthetic(&self.synthetic_config()),
        }
    }

    /// The input graph after the configured perturbation.
    pub fn input_graph(&self) -> Result<(HeteroGraph, Option<PerturbReport>)> {
        let g = self.base_graph()?;
        if self.perturb_rate == 0.0 {
            return Ok((g, None));
        }
        let (p, report) = perturb_graph(&g, &self.perturb_config())?;
        Ok((p, Some(report)))
    }
}

/// Train-config variant for a named model.
pub fn named_model(base: &TrainConfig, name: &str) -> Result<TrainConfig> {
    let mut c = base.clone();
    match name {
        "hgul" => c.model = ModelKind::Hgul,
        "rgcn" => c.model = ModelKind::Rgcn,
        "gcn" => c.model = ModelKind::Gcn,
        "hgul_no_knn" | "hgul_no_gsl" | "hgul_no_affinity" => {
            c.model = ModelKind::Hgul;
            c.ablation = Ablation::default();
            match name {
                "hgul_no_knn" => c.ablation.disable_knn = true,
                "hgul_no_gsl" => c.ablation.disable_gsl = true,
                _ => c.ablation.disable_affinity = true,
            }
        }
        other => return Err(Error::Config(format!("unknown model `{other}`"))),
    }
    Ok(c)
}

/// Ablation variants in table order.
pub const ABLATION_VARIANTS: [&str; 4] = ["full", "w/o kNN", "w/o GSL", "w/o affinity"];

fn ablation_configs(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let mut out = Vec::new();
    for (i, name) in ABLATION_VARIANTS.iter().enumerate() {
        let mut c = base.clone();
        c.model = ModelKind::Hgul;
        c.ablation = Ablation {
            disable_knn: i == 1,
            disable_gsl: i == 2,
            disable_affinity: i == 3,
        };
        out.push((*name, c));
    }
    out
}

/// Parse `argv` and run, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Worker-pool size from [`WORKERS_ENV`], if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn run(command: &Command) -> Result<()> {
    let args = command.args();
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    fs::create_dir_all(&args.out)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers_from_env()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| match command {
        Command::Train(_) => cmd_train(&cfg, &args.out),
        Command::Ablate(_) => cmd_ablate(&cfg, &args.out),
        Command::Sweep(_) => cmd_sweep(&cfg, &args.out),
        Command::Robustness(_) => cmd_robustness(&cfg, &args.out),
        Command::Spectral(_) => cmd_spectral(&cfg, &args.out),
        Command::Generate(_) => cmd_generate(&cfg, &args.out),
    })
}

fn csv_writer(path: &Path, cfg: &RunConfig) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    for line in cfg.to_toml().lines() {
        writeln!(f, "# {line}")?;
    }
    Ok(csv::Writer::from_writer(f))
}

fn write_json(path: &Path, cfg: &RunConfig, body: serde_json::Value) -> Result<()> {
    let mut doc = serde_json::json!({ "config": cfg });
    if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Per-epoch CSV columns.
pub const EPOCH_COLUMNS: [&str; 9] =
    ["epoch", "l_task", "l_reg", "loss", "tau", "train", "val", "test", "kept_edges"];

pub fn write_epochs(path: &Path, cfg: &RunConfig, epochs: &[EpochRecord]) -> Result<()> {
    let mut w = csv_writer(path, cfg)?;
    w.write_record(EPOCH_COLUMNS)?;
    for r in epochs {
        w.write_record(&[
            r.epoch.to_string(),
            r.l_task.to_string(),
            r.l_reg.to_string(),
            r.loss.to_string(),
            r.tau.to_string(),
            r.train.to_string(),
            r.val.to_string(),
            r.test.to_string(),
            r.kept_edges.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn metrics_json(m: &Metrics) -> serde_json::Value {
    serde_json::json!({
        "best_epoch": m.best_epoch,
        "best_val": m.best_val,
        "test_at_best": m.test_at_best,
        "final_test": m.final_test,
        "support_violations": m.support_violations,
    })
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (graph, report) = cfg.input_graph()?;
    let m = train(&graph, &cfg.train_config())?;
    write_epochs(&out.join("epochs.csv"), cfg, &m.epochs)?;
    write_json(
        &out.join("summary.json"),
        cfg,
        serde_json::json!({ "metrics": metrics_json(&m), "perturbation": report }),
    )?;
    println!(
        "best epoch {} val {:.4} test {:.4}",
        m.best_epoch, m.best_val, m.test_at_best
    );
    Ok(())
}

fn slug(name: &str) -> String {
    name.replace("w/o ", "no_").replace(' ', "_").to_lowercase()
}

fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (graph, report) = cfg.input_graph()?;
    let runs: Vec<(&str, Metrics)> = ablation_configs(&cfg.train_config())
        .into_par_iter()
        .map(|(name, c)| Ok((name, train(&graph, &c)?)))
        .collect::<Result<_>>()?;
    let mut w = csv_writer(&out.join("ablation.csv"), cfg)?;
    w.write_record(["variant", "best_epoch", "best_val", "test_at_best", "final_test"])?;
    let mut rows = Vec::new();
    for (name, m) in &runs {
        write_epochs(&out.join(format!("epochs_{}.csv", slug(name))), cfg, &m.epochs)?;
        w.write_record(&[
            name.to_string(),
            m.best_epoch.to_string(),
            m.best_val.to_string(),
            m.test_at_best.to_string(),
            m.final_test.to_string(),
        ])?;
        rows.push(serde_json::json!({ "variant": name, "metrics": metrics_json(m) }));
        println!("{name:>14}  test {:.4}", m.test_at_best);
    }
    w.flush()?;
    write_json(
        &out.join("summary.json"),
        cfg,
        serde_json::json!({ "variants": rows, "perturbation": report }),
    )
}

/// One cell of the sensitivity grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub k: usize,
    pub delta: f64,
    pub gamma: f64,
}

pub fn sensitivity_grid(cfg: &RunConfig) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &k in &cfg.sweep_k {
        for &delta in &cfg.sweep_delta {
            for &gamma in &cfg.sweep_gamma {
                cells.push(GridCell { k, delta, gamma });
            }
        }
    }
    cells
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (graph, _) = cfg.input_graph()?;
    let base = cfg.train_config();
    let grid = sensitivity_grid(cfg);
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let results: Vec<Metrics> = grid
        .par_iter()
        .map(|cell| {
            let mut c = base.clone();
            c.knn.k = cell.k;
            c.gumbel.delta = cell.delta;
            c.gamma = cell.gamma;
            c.validate()?;
            let m = train(&graph, &c)?;
            let name = format!("k{}_delta{}_gamma{}.csv", cell.k, cell.delta, cell.gamma);
            write_epochs(&cells_dir.join(name), cfg, &m.epochs)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut w = csv_writer(&out.join("sweep.csv"), cfg)?;
    w.write_record(["k", "delta", "gamma", "best_epoch", "best_val", "test_at_best"])?;
    for (cell, m) in grid.iter().zip(&results) {
        w.write_record(&[
            cell.k.to_string(),
            cell.delta.to_string(),
            cell.gamma.to_string(),
            m.best_epoch.to_string(),
            m.best_val.to_string(),
            m.test_at_best.to_string(),
        ])?;
    }
    w.flush()?;
    let rows: Vec<_> = grid
        .iter()
        .zip(&results)
        .map(|(c, m)| serde_json::json!({ "cell": c, "metrics": metrics_json(m) }))
        .collect();
    write_json(&out.join("summary.json"), cfg, serde_json::json!({ "cells": rows }))?;
    println!("{} cells written", grid.len());
    Ok(())
}

fn cmd_robustness(cfg: &RunConfig, out: &Path) -> Result<()> {
    let graph = cfg.base_graph()?;
    let base = cfg.train_config();
    let models = cfg
        .models
        .iter()
        .map(|n| Ok((n.clone(), named_model(&base, n)?)))
        .collect::<Result<Vec<_>>>()?;
    let (rows, cells) = robustness_sweep(&graph, &cfg.rates, &models, cfg.repeats, &cfg.perturb_config())?;
    let mut w = csv_writer(&out.join("curve.csv"), cfg)?;
    for r in &rows {
        w.serialize(r)?;
        println!("rate {:.2} {:>18} {:.4} ± {:.4}", r.rate, r.model, r.mean, r.std);
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("cells.csv"), cfg)?;
    for c in &cells {
        w.serialize(c)?;
    }
    w.flush()?;
    write_json(&out.join("summary.json"), cfg, serde_json::json!({ "curve": rows }))
}

fn cmd_spectral(cfg: &RunConfig, out: &Path) -> Result<()> {
    let clean = cfg.base_graph()?;
    let (t1, t2) = (cfg.spectral_type1.as_str(), cfg.spectral_type2.as_str());
    if cfg.spectral_class >= clean.num_classes() {
        return Err(Error::Config(format!(
            "spectral_class {} out of range for {} classes",
            cfg.spectral_class,
            clean.num_classes()
        )));
    }
    let profile = |g: &HeteroGraph| -> Result<serde_json::Value> {
        let bl = build_block_laplacian(g, t1, t2)?;
        let f = class_signal(&block_classes(g, t1, t2)?, cfg.spectral_class);
        let energy = spectral_energy(&bl.laplacian, &f)?;
        let schur = schur_complement(&bl)?;
        let n1 = bl.n1();
        let f1 = f.rows(0, n1).into_owned();
        let f2 = f.rows(n1, bl.n2()).into_owned();
        Ok(serde_json::json!({
            "centroid": energy.centroid(),
            "entropy": energy.entropy(),
            "low_fraction": energy.low_fraction(),
            "parseval_total": energy.total(),
            "signal_norm_sq": f.norm_squared(),
            "schur_residual": verify_decomposition(&bl)?,
            "schur_regularized": schur.regularized,
            "correction_norm": schur.correction.norm(),
            "cross_dirichlet": cross_dirichlet(&bl.b, &f1, &f2)?,
        }))
    };
    let bl = build_block_laplacian(&clean, t1, t2)?;
    let f = class_signal(&block_classes(&clean, t1, t2)?, cfg.spectral_class);
    spectral_energy(&bl.laplacian, &f)?.save_csv(out.join("spectral.csv"))?;
    let homophily: Vec<_> = clean
        .relations()
        .iter()
        .filter(|r| r.src_type == r.dst_type && clean.type_index(&r.src_type) == Some(clean.target_type()))
        .map(|r| serde_json::json!({ "relation": r.name, "homophily": edge_homophily(&r.edges, clean.labels(), clean.labels()) }))
        .collect();
    let mut body = serde_json::json!({ "clean": profile(&clean)?, "homophily": homophily });
    if cfg.perturb_rate > 0.0 {
        let (noisy, report) = perturb_graph(&clean, &cfg.perturb_config())?;
        let bn = build_block_laplacian(&noisy, t1, t2)?;
        let fnoisy = class_signal(&block_classes(&noisy, t1, t2)?, cfg.spectral_class);
        spectral_energy(&bn.laplacian, &fnoisy)?.save_csv(out.join("spectral_perturbed.csv"))?;
        body["perturbed"] = profile(&noisy)?;
        body["weyl"] = serde_json::to_value(weyl_bound_check(&bl.laplacian, &bn.laplacian)?)?;
        body["perturbation"] = serde_json::to_value(report)?;
    }
    println!("centroid {:.4}", body["clean"]["centroid"]);
    write_json(&out.join("summary.json"), cfg, body)
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (graph, report) = cfg.input_graph()?;
    save_graph(&graph, out.join("graph.json"))?;
    write_json(
        &out.join("summary.json"),
        cfg,
        serde_json::json!({
            "nodes": graph.total_nodes(),
            "edges": graph.num_edges(),
            "perturbation": report,
        }),
    )?;
    println!("{} nodes, {} edges", graph.total_nodes(), graph.num_edges());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flag_over_file_over_default() {
        let cfg = RunConfig::resolve(Some("epochs = 7\nlr = 0.1\n"), &["epochs=3".into()]).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 0.1);
        assert_eq!(cfg.gamma, RunConfig::default().gamma);
    }

    #[test]
    fn bare_strings_and_lists() {
        let cfg = RunConfig::resolve(
            None,
            &["model=rgcn".into(), "rates=[0.0, 0.5]".into(), "metric=macro_f1".into()],
        )
        .unwrap();
        assert_eq!(cfg.model, ModelKind::Rgcn);
        assert_eq!(cfg.rates, vec![0.0, 0.5]);
        assert_eq!(cfg.metric, Metric::MacroF1);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::resolve(Some("epoch = 3\n"), &[]).unwrap_err().to_string();
        assert!(err.contains("epoch"), "{err}");
        let err = RunConfig::resolve(None, &["bogus_key=1".into()]).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        assert!(RunConfig::resolve(None, &["lr".into()]).is_err());
        assert!(RunConfig::resolve(None, &["lr=-1".into()]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::resolve(None, &["ppr_alpha=0.85".into(), "graph=\"g.json\"".into()]).unwrap();
        let back = RunConfig::resolve(Some(&cfg.to_toml()), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train_config().ppr.alpha, 0.85);
    }

    #[test]
    fn grid_has_36_cells() {
        let grid = sensitivity_grid(&RunConfig::default());
        assert_eq!(grid.len(), 36);
        assert_eq!(grid[0], GridCell { k: 2, delta: 0.3, gamma: 0.0 });
    }

    #[test]
    fn named_models() {
        let base = TrainConfig::default();
        assert_eq!(named_model(&base, "gcn").unwrap().model, ModelKind::Gcn);
        assert!(named_model(&base, "hgul_no_gsl").unwrap().ablation.disable_gsl);
        assert!(named_model(&base, "mlp").is_err());
        let variants = ablation_configs(&base);
        assert_eq!(variants.len(), 4);
        assert_eq!(slug(variants[3].0), "no_affinity");
    }
}
