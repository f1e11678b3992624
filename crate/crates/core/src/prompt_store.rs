//! Source prompt library: per-task prompts and task embeddings, similarity
//! retrieval and the forward-transfer initializations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::container::{Container, DType, Kind, Tensor};
use crate::error::{Error, Result};
use crate::model::{InjectionMode, ModelConfig, SoftPrompt};

#[derive(Clone, Debug, PartialEq)]
pub struct SplEntry {
    pub task_id: usize,
    pub prompt: SoftPrompt,
    pub embedding: Vec<f64>,
    /// Test F1 (percent) measured right after the task's full-shot stage.
    pub recorded_f1: f64,
}

/// Entries in the order tasks completed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourcePromptLibrary {
    entries: Vec<SplEntry>,
}

impl SourcePromptLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SplEntry] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &SplEntry> {
        self.entries.iter()
    }

    pub fn get(&self, task_id: usize) -> Option<&SplEntry> {
        self.entries.iter().find(|e| e.task_id == task_id)
    }

    pub fn last(&self) -> Option<&SplEntry> {
        self.entries.last()
    }

    /// Append an entry. The prompt is copied, so later changes to the
    /// caller's prompt do not reach the library.
    pub fn store(
        &mut self,
        task_id: usize,
        prompt: &SoftPrompt,
        embedding: &[f64],
        recorded_f1: f64,
    ) -> Result<()> {
        if self.get(task_id).is_some() {
            return Err(Error::DuplicateTask(task_id));
        }
        if let Some(first) = self.entries.first() {
            if embedding.len() != first.embedding.len() {
                return Err(Error::Shape(format!(
                    "embedding of length {} in a library of length {}",
                    embedding.len(),
                    first.embedding.len()
                )));
            }
            if prompt.hidden() != first.prompt.hidden() {
                return Err(Error::Shape("prompt width differs from stored prompts".into()));
            }
        }
        if !(0.0..=100.0).contains(&recorded_f1) {
            return Err(Error::Input(format!("recorded F1 {recorded_f1} outside [0, 100]")));
        }
        self.entries.push(SplEntry {
            task_id,
            prompt: prompt.clone(),
            embedding: embedding.to_vec(),
            recorded_f1,
        });
        Ok(())
    }

    /// Swap the prompt and score of a stored task in one step.
    pub fn replace(&mut self, task_id: usize, prompt: &SoftPrompt, recorded_f1: f64) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.task_id == task_id)
            .ok_or_else(|| Error::Input(format!("task {task_id} not in library")))?;
        if entry.prompt.values().dim() != prompt.values().dim() {
            return Err(Error::Shape("replacement prompt shape differs".into()));
        }
        *entry = SplEntry {
            prompt: prompt.clone(),
            recorded_f1,
            ..entry.clone()
        };
        Ok(())
    }

    /// Write the library with its model config.
    pub fn save(&self, path: &Path, config: &ModelConfig) -> Result<()> {
        let meta: Vec<EntryMeta> = self
            .entries
            .iter()
            .map(|e| EntryMeta {
                task_id: e.task_id,
                recorded_f1: e.recorded_f1,
                injection: e.prompt.injection(),
                prompt_len: e.prompt.prompt_len(),
            })
            .collect();
        let mut tensors = Vec::new();
        for e in &self.entries {
            tensors.push(Tensor::from_mat(format!("prompt.{}", e.task_id), e.prompt.values(), DType::F64));
            tensors.push(Tensor::from_vec(format!("embedding.{}", e.task_id), &e.embedding, DType::F64));
        }
        Container {
            kind: Kind::PromptLibrary,
            config: config.clone(),
            meta: serde_json::to_value(meta).expect("metadata serializes"),
            tensors,
        }
        .write(path)
    }

    /// Read a library saved for `config`; any other config is rejected.
    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind(Kind::PromptLibrary)?;
        if !c.config.same_backbone(config) || c.config.prompt_len != config.prompt_len {
            return Err(Error::Config(format!(
                "library was built for {:?}, not {:?}",
                c.config, config
            )));
        }
        let meta: Vec<EntryMeta> = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Container { offset: 0, msg: format!("metadata: {e}") })?;
        let mut lib = Self::new();
        for m in meta {
            let rows = match m.injection {
                InjectionMode::Shallow => m.prompt_len,
                InjectionMode::Deep => config.layers * m.prompt_len,
            };
            let values: Mat = c.mat(&format!("prompt.{}", m.task_id), (rows, config.hidden))?;
            let prompt = SoftPrompt::new(values, m.injection, m.prompt_len)?;
            let z = c.vector(&format!("embedding.{}", m.task_id), config.hidden)?;
            lib.store(m.task_id, &prompt, &z, m.recorded_f1)?;
        }
        Ok(lib)
    }
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    task_id: usize,
    recorded_f1: f64,
    injection: InjectionMode,
    prompt_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    /// `1 / (1 + ||a - b||)`
    pub euclidean: f64,
    /// Cosine similarity, zero when either vector is zero.
    pub cosine: f64,
    pub score: f64,
}

pub fn similarity(a: &[f64], b: &[f64]) -> Result<Similarity> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "embeddings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let euclidean = 1.0 / (1.0 + dist);
    let cosine = if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    };
    Ok(Similarity {
        euclidean,
        cosine,
        score: (euclidean + cosine) / 2.0,
    })
}

/// Prompt of the most recently stored task, or a seeded random prompt.
pub fn init_clinit(library: &SourcePromptLibrary, config: &ModelConfig, seed: u64) -> SoftPrompt {
    match library.last() {
        Some(e) => e.prompt.clone(),
        None => SoftPrompt::random(config, seed),
    }
}

/// Prompt of the stored task whose embedding scores highest against `query`
/// (lowest task id on ties), with that task's id.
pub fn init_siminit(
    library: &SourcePromptLibrary,
    query: &[f64],
    config: &ModelConfig,
    seed: u64,
) -> Result<(SoftPrompt, Option<usize>)> {
    let mut best: Option<(f64, &SplEntry)> = None;
    for e in library.iter() {
        let s = similarity(query, &e.embedding)?.score;
        let better = match best {
            None => true,
            Some((bs, be)) => s > bs || (s == bs && e.task_id < be.task_id),
        };
        if better {
            best = Some((s, e));
        }
    }
    Ok(match best {
        Some((_, e)) => (e.prompt.clone(), Some(e.task_id)),
        None => (SoftPrompt::random(config, seed), None),
    })
}

/// Elementwise mean of all stored prompts (layer by layer for deep prompts).
pub fn init_meaninit(library: &SourcePromptLibrary, config: &ModelConfig, seed: u64) -> Result<SoftPrompt> {
    let Some(first) = library.entries.first() else {
        return Ok(SoftPrompt::random(config, seed));
    };
    let mut acc = Mat::zeros(first.prompt.values().dim());
    for e in library.iter() {
        if e.prompt.injection() != first.prompt.injection() {
            return Err(Error::MixedInjection);
        }
        if e.prompt.values().dim() != acc.dim() {
            return Err(Error::Shape("stored prompts differ in shape".into()));
        }
        acc += e.prompt.values();
    }
    acc /= library.len() as f64;
    SoftPrompt::new(acc, first.prompt.injection(), first.prompt.prompt_len())
}
