use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite loss ({0})")]
    NanLoss(f64),
    #[error("task {0} is already stored in the prompt library")]
    DuplicateTask(usize),
    #[error("prompt library holds mixed injection modes")]
    MixedInjection,
    #[error("{path}:{line}: {msg}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("data: {0}")]
    Data(String),
    #[error("corrupt container at byte {offset}: {msg}")]
    Container { offset: usize, msg: String },
    #[error("evaluation failed for task {task}: {msg}")]
    Evaluation { task: usize, msg: String },
    #[error("harness: {0}")]
    Harness(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
