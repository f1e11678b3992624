use serde::{Deserialize, Serialize};

use crate::autodiff::logsumexp;
use crate::error::{Error, Result};
use crate::model::vocab::{Vocabulary, NON_RUMOR_WORDS, RUMOR_WORDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    NonRumor,
    Rumor,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NonRumor, Label::Rumor];

    pub fn index(self) -> usize {
        match self {
            Label::NonRumor => 0,
            Label::Rumor => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::NonRumor
        } else {
            Label::Rumor
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonRumor => "non-rumor",
            Label::Rumor => "rumor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "non-rumor" => Some(Label::NonRumor),
            "rumor" => Some(Label::Rumor),
            _ => None,
        }
    }
}

/// `p(non-rumor), p(rumor)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelDistribution(pub [f64; 2]);

impl LabelDistribution {
    /// Softmax over two label scores.
    pub fn from_scores(scores: [f64; 2]) -> Self {
        let lse = logsumexp(scores.iter().copied());
        Self([(scores[0] - lse).exp(), (scores[1] - lse).exp()])
    }

    pub fn prob(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    /// Most probable label; exact ties go to non-rumor.
    pub fn argmax(&self) -> Label {
        if self.0[1] > self.0[0] {
            Label::Rumor
        } else {
            Label::NonRumor
        }
    }
}

/// Label → set of vocabulary ids whose masked-LM probability counts for it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    words: [Vec<usize>; 2],
}

impl Verbalizer {
    pub fn new(non_rumor: Vec<usize>, rumor: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if non_rumor.is_empty() || rumor.is_empty() {
            return Err(Error::Input("every label needs at least one word".into()));
        }
        if let Some(bad) = non_rumor.iter().chain(&rumor).find(|&&id| id >= vocab_size) {
            return Err(Error::Input(format!(
                "label word id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        if non_rumor.iter().any(|id| rumor.contains(id)) {
            return Err(Error::Input("label word sets overlap".into()));
        }
        Ok(Self {
            words: [non_rumor, rumor],
        })
    }

    /// The reserved label words of [`Vocabulary`].
    pub fn standard(vocab: &Vocabulary) -> Self {
        let ids = |ws: &[&str]| ws.iter().map(|w| vocab.id(w).expect("reserved")).collect();
        Self {
            words: [ids(&NON_RUMOR_WORDS), ids(&RUMOR_WORDS)],
        }
    }

    pub fn words(&self, label: Label) -> &[usize] {
        &self.words[label.index()]
    }

    pub fn groups(&self) -> &[Vec<usize>; 2] {
        &self.words
    }

    /// Softmax over the vocabulary, probability mass summed within each label's
    /// word set, renormalized over labels.
    ///
    /// The full-vocabulary normalizer cancels in the renormalization, so this
    /// equals a two-way softmax over per-label log-sum-exp scores.
    pub fn verbalize(&self, mask_logits: &[f64]) -> Result<LabelDistribution> {
        if !mask_logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("non-finite mask logits".into()));
        }
        let score = |ids: &[usize]| logsumexp(ids.iter().map(|&i| mask_logits[i]));
        Ok(LabelDistribution::from_scores([
            score(&self.words[0]),
            score(&self.words[1]),
        ]))
    }
}
