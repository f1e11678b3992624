pub mod backbone;
pub mod config;
pub mod forward;
pub mod params;
pub mod pretrain;
pub mod prompt;
pub mod verbalizer;
pub mod vocab;

pub use backbone::{backbone_param_count, Backbone, BackboneVars};
pub use config::{HeadMode, InjectionMode, ModelConfig};
pub use forward::{
    assemble_input, batch_loss, classify_cls, forward, full_loss_and_grads, predict,
    predict_distributions, prompt_loss_and_grad, task_encode, AssembledInput, EncodedExample,
    Slot,
};
pub use params::{trainable_fraction, TuningMode};
pub use prompt::SoftPrompt;
pub use verbalizer::{Label, LabelDistribution, Verbalizer};
pub use vocab::Vocabulary;
