mod example;
mod jsonl;
mod preprocess;
mod split;
mod synth;

pub use example::{DomainTask, EncodedTask, RumorExample};
pub use jsonl::{load_jsonl, parse_jsonl};
pub use preprocess::{normalize_text, preprocess};
pub use split::{few_shot, split, MIN_DOMAIN_SIZE};
pub use synth::{synth_stream, DomainManifest, LabelRule, SynthManifest, SynthStream, SynthStreamConfig};
