mod method;
mod metrics;
mod rehearsal;
mod runner;

pub use method::{InitStrategy, Learner, MethodConfig, TrainingConfig};
pub use metrics::{avg_f1, bwt, f1_score, fs_f1, fwt, Metrics, RMatrix};
pub use rehearsal::{rehearsal_sample, RehearsalBuffer};
pub use runner::{Harness, RunResult, StageRecord};
