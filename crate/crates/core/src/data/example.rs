use serde::{Deserialize, Serialize};

use crate::model::{EncodedExample, Label, Vocabulary};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RumorExample {
    pub claim: String,
    pub comments: Vec<String>,
    pub label: Label,
    pub domain: String,
}

impl RumorExample {
    /// Token ids of the claim and of all comments joined into one block.
    pub fn encode(&self, vocab: &Vocabulary) -> EncodedExample {
        EncodedExample {
            claim: vocab.encode(&self.claim),
            comments: self.comments.iter().flat_map(|c| vocab.encode(c)).collect(),
            label: self.label,
        }
    }
}

/// One domain split into train, validation and test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainTask {
    pub name: String,
    pub train: Vec<RumorExample>,
    pub validation: Vec<RumorExample>,
    pub test: Vec<RumorExample>,
}

/// A domain task in token-id form.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTask {
    pub name: String,
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

impl DomainTask {
    pub fn encode(&self, vocab: &Vocabulary) -> EncodedTask {
        let enc = |xs: &[RumorExample]| xs.iter().map(|x| x.encode(vocab)).collect();
        EncodedTask {
            name: self.name.clone(),
            train: enc(&self.train),
            validation: enc(&self.validation),
            test: enc(&self.test),
        }
    }
}
