use serde::{Deserialize, Serialize};

use crate::model::backbone::backbone_param_count;
use crate::model::config::{InjectionMode, ModelConfig};

/// Which parameters a learner updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningMode {
    Finetune,
    ShallowPrompt,
    DeepPrompt,
    DeepPromptTphnet,
}

/// Parameters of the prompt hypernetwork plus its task embedding, for a
/// prompt with `prompt_numel` entries and bottleneck width `bottleneck`.
pub fn tphnet_param_count(config: &ModelConfig, prompt_numel: usize, bottleneck: usize) -> usize {
    let d = config.hidden;
    bottleneck * d + bottleneck + prompt_numel * bottleneck + prompt_numel + d
}

/// Tunable parameters over total parameters (backbone plus tunable extras).
pub fn trainable_fraction(config: &ModelConfig, mode: TuningMode, bottleneck: usize) -> f64 {
    let backbone = backbone_param_count(config);
    let shallow = config.with_injection(InjectionMode::Shallow).prompt_numel();
    let deep = config.with_injection(InjectionMode::Deep).prompt_numel();
    let tunable = match mode {
        TuningMode::Finetune => return 1.0,
        TuningMode::ShallowPrompt => shallow,
        TuningMode::DeepPrompt => deep,
        TuningMode::DeepPromptTphnet => tphnet_param_count(config, deep, bottleneck),
    };
    tunable as f64 / (backbone + tunable) as f64
}
