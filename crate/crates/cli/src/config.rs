use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use cptrd_core::data::{load_jsonl, preprocess, split, synth_stream, DomainTask, SynthStreamConfig};
use cptrd_core::harness::{MethodConfig, TrainingConfig};
use cptrd_core::model::pretrain::PretrainConfig;
use cptrd_core::{ModelConfig, Verbalizer, Vocabulary};
use serde::Deserialize;

use crate::Usage;

/// A method given either by its label or as a full table.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MethodSpec {
    Name(String),
    Table(MethodConfig),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthStreamConfig),
    Jsonl(JsonlSource),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlSource {
    pub paths: Vec<PathBuf>,
    /// Seed of the train/validation/test shuffle.
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Backbone checkpoint; defaults to `backbone.ckpt` in the output directory.
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Task orders as lists of domain names; defaults to the source order.
    #[serde(default)]
    pub orders: Vec<Vec<String>>,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    pub data: DataSource,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Everything a run needs once the config has been checked.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub methods: Vec<MethodConfig>,
    pub orders: Vec<Vec<String>>,
    pub vocab: Vocabulary,
    pub verbalizer: Verbalizer,
    pub domains: Vec<DomainTask>,
    /// Pretraining text.
    pub corpus: Vec<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Usage(format!("invalid config {}: {e}", path.display())).into())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.output_dir.join("backbone.ckpt"))
    }

    /// Validate every field and load the data source. Nothing is trained.
    pub fn prepare(self) -> Result<Experiment> {
        self.model.validate().map_err(|e| Usage(e.to_string()))?;
        self.training.validate().map_err(|e| Usage(e.to_string()))?;
        if self.seeds.is_empty() {
            bail!(Usage("at least one seed is required".into()));
        }
        let mut methods = Vec::new();
        for spec in &self.methods {
            let m = match spec {
                MethodSpec::Name(n) => n.parse::<MethodConfig>().map_err(|e| Usage(e.to_string()))?,
                MethodSpec::Table(m) => {
                    m.validate().map_err(|e| Usage(e.to_string()))?;
                    m.clone()
                }
            };
            if methods.iter().any(|x: &MethodConfig| x.label() == m.label()) {
                bail!(Usage(format!("method {} listed twice", m.label())));
            }
            methods.push(m);
        }
        if methods.is_empty() {
            bail!(Usage("no methods configured".into()));
        }

        let (vocab, domains, corpus) = load_source(&self.data, &self.model)?;
        let names: Vec<String> = domains.iter().map(|d| d.name.clone()).collect();
        let orders = if self.orders.is_empty() { vec![names.clone()] } else { self.orders.clone() };
        for order in &orders {
            if order.len() < 2 {
                bail!(Usage("every task order needs at least two domains".into()));
            }
            let mut seen = BTreeSet::new();
            for name in order {
                if !names.contains(name) {
                    bail!(Usage(format!("task order references unknown domain {name:?}")));
                }
                if !seen.insert(name) {
                    bail!(Usage(format!("domain {name:?} appears twice in one order")));
                }
            }
        }
        let verbalizer = Verbalizer::standard(&vocab);
        Ok(Experiment { config: self, methods, orders, vocab, verbalizer, domains, corpus })
    }
}

fn load_source(source: &DataSource, model: &ModelConfig) -> Result<(Vocabulary, Vec<DomainTask>, Vec<String>)> {
    let (vocab, domains, corpus) = match source {
        DataSource::Synth(c) => {
            let s = synth_stream(c).map_err(|e| Usage(e.to_string()))?;
            (s.vocab, s.domains, s.corpus)
        }
        DataSource::Jsonl(j) => {
            if j.paths.is_empty() {
                bail!(Usage("jsonl source lists no files".into()));
            }
            let mut by_domain: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for p in &j.paths {
                if !p.exists() {
                    bail!(Usage(format!("missing data file {}", p.display())));
                }
                for ex in load_jsonl(p).map_err(|e| Usage(e.to_string()))? {
                    let ex = preprocess(&ex);
                    by_domain.entry(ex.domain.clone()).or_default().push(ex);
                }
            }
            let mut domains = Vec::new();
            for (name, exs) in &by_domain {
                domains.push(split(name, exs, j.split_seed).map_err(|e| Usage(e.to_string()))?);
            }
            // Pretraining and the vocabulary only see training text.
            let corpus: Vec<String> = domains
                .iter()
                .flat_map(|d| d.train.iter())
                .flat_map(|x| std::iter::once(x.claim.clone()).chain(x.comments.iter().cloned()))
                .collect();
            let vocab = Vocabulary::from_corpus(corpus.iter().map(String::as_str), model.vocab_size);
            (vocab, domains, corpus)
        }
    };
    if vocab.len() > model.vocab_size {
        bail!(Usage(format!(
            "data needs {} vocabulary entries but the model has {}",
            vocab.len(),
            model.vocab_size
        )));
    }
    if corpus.is_empty() {
        bail!(Usage("the data source yields no pretraining text".into()));
    }
    Ok((vocab, domains, corpus))
}

/// Encode corpus lines, dropping ones that are empty after tokenization.
pub fn encode_corpus(vocab: &Vocabulary, corpus: &[String]) -> Vec<Vec<usize>> {
    corpus.iter().map(|t| vocab.encode(t)).filter(|ids| !ids.is_empty()).collect()
}
