use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cptrd_core::model::pretrain::{mlm_loss, pretrain};
use cptrd_core::Backbone;
use serde::Serialize;

use crate::config::{encode_corpus, ExperimentConfig};
use crate::Usage;

#[derive(Serialize)]
struct PretrainSummary {
    digest: String,
    steps: usize,
    seed: u64,
    first_loss: f64,
    final_loss: f64,
    heldout_loss_random: f64,
    heldout_loss_pretrained: f64,
}

/// Every tenth corpus line is held out to compare against the random init.
fn held_out(i: usize) -> bool {
    i % 10 == 9
}

pub fn cmd_pretrain(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.pretrain.seed = seed;
    }
    let exp = cfg.prepare()?;
    let cfg = &exp.config;
    let corpus = encode_corpus(&exp.vocab, &exp.corpus);
    let (train, heldout): (Vec<_>, Vec<_>) = corpus.into_iter().enumerate().partition(|(i, _)| !held_out(*i));
    let train: Vec<Vec<usize>> = train.into_iter().map(|(_, s)| s).collect();
    let heldout: Vec<Vec<usize>> = heldout.into_iter().map(|(_, s)| s).collect();
    if train.is_empty() || heldout.is_empty() {
        bail!(Usage("the pretraining corpus is too small to hold out a part".into()));
    }

    let mut backbone = Backbone::init(&cfg.model, cfg.pretrain.seed);
    let heldout_loss_random = mlm_loss(&backbone, &heldout, &cfg.model)?;
    let log = pretrain(&mut backbone, &train, &cfg.model, &cfg.pretrain).context("pretraining failed")?;
    let heldout_loss_pretrained = mlm_loss(&backbone, &heldout, &cfg.model)?;
    for (i, chunk) in log.losses.chunks(500).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        eprintln!("steps {:>6}-{:<6} loss {mean:.4}", i * 500 + 1, i * 500 + chunk.len());
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.checkpoint_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    backbone.save(&path, &cfg.model)?;
    let tail = &log.losses[log.losses.len().saturating_sub(100)..];
    let summary = PretrainSummary {
        digest: backbone.digest(),
        steps: cfg.pretrain.steps,
        seed: cfg.pretrain.seed,
        first_loss: log.losses.first().copied().unwrap_or(f64::NAN),
        final_loss: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        heldout_loss_random,
        heldout_loss_pretrained,
    };
    std::fs::write(cfg.output_dir.join("pretrain.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let losses: String = log.losses.iter().enumerate().map(|(i, l)| format!("{},{l}\n", i + 1)).collect();
    std::fs::write(cfg.output_dir.join("pretrain_loss.csv"), format!("step,loss\n{losses}"))?;
    println!(
        "checkpoint {} digest {}\nheld-out masked-token loss: random {:.4}, pretrained {:.4}",
        path.display(),
        summary.digest,
        heldout_loss_random,
        heldout_loss_pretrained
    );
    Ok(())
}
