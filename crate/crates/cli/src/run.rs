use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cptrd_core::data::EncodedTask;
use cptrd_core::harness::{Harness, MethodConfig, Metrics, RunResult};
use cptrd_core::{trainable_fraction, Backbone};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::Usage;

/// Contents of `metrics.json` in each cell directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellMetrics {
    pub method: String,
    pub order: Vec<String>,
    pub seed: u64,
    pub trainable_fraction: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// Mean and sample standard deviation; `None` when no value is present.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub runs: usize,
    pub trainable_fraction: Option<f64>,
    pub avg_f1: Option<Summary>,
    pub fwt: Option<Summary>,
    pub bwt: Option<Summary>,
    pub fs_f1: BTreeMap<usize, Summary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub methods: Vec<MethodAggregate>,
    pub failed: Vec<String>,
}

struct Cell {
    method: MethodConfig,
    order_index: usize,
    seed: u64,
}

pub fn cell_dir(out: &Path, method: &str, order_index: usize, seed: u64) -> PathBuf {
    out.join(method).join(format!("order{order_index}")).join(seed.to_string())
}

pub fn cmd_run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, jobs: usize) -> Result<()> {
    if jobs == 0 {
        bail!(Usage("--jobs must be at least 1".into()));
    }
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    let exp = cfg.prepare()?;
    let ckpt = exp.config.checkpoint_path();
    if !ckpt.exists() {
        bail!(Usage(format!("no backbone checkpoint at {}; run `cptrd pretrain` first", ckpt.display())));
    }
    let backbone = Backbone::load(&ckpt, &exp.config.model).map_err(|e| Usage(format!("{}: {e}", ckpt.display())))?;

    let tasks: BTreeMap<&str, EncodedTask> =
        exp.domains.iter().map(|d| (d.name.as_str(), d.encode(&exp.vocab))).collect();
    let orders: Vec<Vec<EncodedTask>> = exp
        .orders
        .iter()
        .map(|o| o.iter().map(|n| tasks[n.as_str()].clone()).collect())
        .collect();

    let mut cells = Vec::new();
    for m in &exp.methods {
        for order_index in 0..orders.len() {
            for &seed in &exp.config.seeds {
                cells.push(Cell { method: m.clone(), order_index, seed });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let outcomes: Vec<(String, Result<CellMetrics>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let dir = cell_dir(&exp.config.output_dir, &c.method.label(), c.order_index, c.seed);
                let r = run_cell(&exp, &backbone, &orders[c.order_index], c, &dir);
                if let Err(e) = &r {
                    let _ = std::fs::create_dir_all(&dir);
                    let _ = std::fs::write(dir.join("error.txt"), format!("{e:#}\n"));
                }
                (dir.display().to_string(), r)
            })
            .collect()
    });

    let mut done = Vec::new();
    let mut failed = Vec::new();
    for (dir, r) in outcomes {
        match r {
            Ok(m) => done.push(m),
            Err(e) => {
                eprintln!("run {dir} failed: {e:#}");
                failed.push(dir);
            }
        }
    }
    let agg = aggregate(&exp.methods, &done, failed.clone());
    std::fs::create_dir_all(&exp.config.output_dir)?;
    std::fs::write(exp.config.output_dir.join("aggregate.json"), serde_json::to_string_pretty(&agg)? + "\n")?;
    for m in &agg.methods {
        let show = |s: &Option<Summary>| s.as_ref().map_or("n/a".to_string(), |s| format!("{:.2} ± {:.2}", s.mean, s.std));
        println!(
            "{:<32} runs {:>2}  Avg.F1 {:<16} FWT {:<16} BWT {}",
            m.method,
            m.runs,
            show(&m.avg_f1),
            show(&m.fwt),
            show(&m.bwt)
        );
    }
    if !failed.is_empty() {
        return Err(anyhow!("{} of {} runs failed", failed.len(), cells.len()));
    }
    Ok(())
}

fn run_cell(exp: &Experiment, backbone: &Backbone, tasks: &[EncodedTask], cell: &Cell, dir: &Path) -> Result<CellMetrics> {
    let harness = Harness {
        backbone,
        verbalizer: &exp.verbalizer,
        model: exp.config.model.clone(),
        training: exp.config.training.clone(),
    };
    let result = harness
        .run_stream(tasks, &cell.method, cell.seed)
        .with_context(|| format!("{} order {} seed {}", cell.method.label(), cell.order_index, cell.seed))?;
    let metrics = CellMetrics {
        method: cell.method.label(),
        order: exp.orders[cell.order_index].clone(),
        seed: cell.seed,
        trainable_fraction: trainable_fraction(
            &cell.method.model_config(&exp.config.model),
            cell.method.tuning_mode(),
            exp.config.training.bottleneck,
        ),
        metrics: result.metrics.clone(),
    };
    write_cell(dir, &result, &metrics)?;
    Ok(metrics)
}

fn write_cell(dir: &Path, result: &RunResult, metrics: &CellMetrics) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let _ = std::fs::remove_file(dir.join("error.txt"));
    std::fs::write(dir.join("rmatrix.csv"), result.rmatrix.to_csv())?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(metrics)? + "\n")?;
    let mut lines = String::new();
    for s in &result.stages {
        lines.push_str(&serde_json::to_string(s)?);
        lines.push('\n');
    }
    std::fs::write(dir.join("stages.jsonl"), lines)?;
    Ok(())
}

pub fn aggregate(methods: &[MethodConfig], done: &[CellMetrics], failed: Vec<String>) -> Aggregate {
    let methods = methods
        .iter()
        .map(|m| {
            let label = m.label();
            let runs: Vec<&CellMetrics> = done.iter().filter(|c| c.method == label).collect();
            let collect = |f: &dyn Fn(&Metrics) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|c| f(&c.metrics)).collect() };
            let mut fs = BTreeMap::new();
            let shots: std::collections::BTreeSet<usize> = runs.iter().flat_map(|c| c.metrics.fs_f1.keys().copied()).collect();
            for k in shots {
                if let Some(s) = Summary::of(&collect(&|m| m.fs_f1.get(&k).copied())) {
                    fs.insert(k, s);
                }
            }
            MethodAggregate {
                method: label,
                runs: runs.len(),
                trainable_fraction: runs.first().map(|c| c.trainable_fraction),
                avg_f1: Summary::of(&collect(&|m| Some(m.avg_f1))),
                fwt: Summary::of(&collect(&|m| m.fwt)),
                bwt: Summary::of(&collect(&|m| m.bwt)),
                fs_f1: fs,
            }
        })
        .collect();
    Aggregate { methods, failed }
}
