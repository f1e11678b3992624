use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::vocab::RESERVED_TOKENS;

/// Where the soft prompt enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionMode {
    /// `l` vectors prepended to the input embeddings.
    Shallow,
    /// One `l`-vector prefix per layer, joined to that layer's keys and values.
    Deep,
}

/// Which output produces the label distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    Verbalizer,
    Cls,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub prompt_len: usize,
    pub max_seq: usize,
    pub injection: InjectionMode,
    pub head: HeadMode,
}

/// Feed-forward width as a multiple of the hidden size.
pub const FFN_MULT: usize = 4;

impl Default for ModelConfig {
    /// Desk-scale backbone used by the CLI and the acceptance suite.
    fn default() -> Self {
        Self {
            vocab_size: 128,
            hidden: 32,
            layers: 2,
            heads: 4,
            prompt_len: 4,
            max_seq: 24,
            injection: InjectionMode::Deep,
            head: HeadMode::Verbalizer,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.heads == 0 || self.layers == 0 {
            return fail("hidden, heads and layers must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return fail(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.prompt_len == 0 {
            return fail("prompt_len must be at least 1".into());
        }
        if self.max_seq < self.prompt_len + 3 {
            return fail(format!(
                "max_seq {} leaves no room for prompt ({}), MASK and SEP",
                self.max_seq, self.prompt_len
            ));
        }
        if self.vocab_size <= RESERVED_TOKENS {
            return fail(format!(
                "vocab_size {} must exceed the {RESERVED_TOKENS} reserved ids",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Rows of a prompt tensor: `l` when shallow, `L·l` when deep.
    pub fn prompt_rows(&self) -> usize {
        match self.injection {
            InjectionMode::Shallow => self.prompt_len,
            InjectionMode::Deep => self.layers * self.prompt_len,
        }
    }

    pub fn prompt_numel(&self) -> usize {
        self.prompt_rows() * self.hidden
    }

    pub fn with_injection(&self, injection: InjectionMode) -> Self {
        Self {
            injection,
            ..self.clone()
        }
    }

    pub fn with_head(&self, head: HeadMode) -> Self {
        Self {
            head,
            ..self.clone()
        }
    }

    /// True when both configs describe the same backbone (prompt placement and
    /// head may differ).
    pub fn same_backbone(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size
            && self.hidden == other.hidden
            && self.layers == other.layers
            && self.heads == other.heads
            && self.max_seq == other.max_seq
    }
}
