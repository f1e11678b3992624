use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadMode, InjectionMode, ModelConfig, TuningMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learner {
    /// Every backbone weight and the prompt are trained.
    Finetune,
    /// One shallow prompt trained through the stream.
    PromptTuning,
    /// One deep prompt trained through the stream.
    PTuningV2,
    /// Per-task deep prompts kept in the prompt library.
    CptRd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    Random,
    Clinit,
    Siminit,
    Meaninit,
}

impl InitStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Clinit => "clinit",
            Self::Siminit => "siminit",
            Self::Meaninit => "meaninit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub learner: Learner,
    #[serde(default = "default_head")]
    pub head: HeadMode,
    #[serde(default = "default_init")]
    pub init: InitStrategy,
    #[serde(default)]
    pub tphnet: bool,
    /// Examples kept per finished domain for replay; 0 disables rehearsal.
    #[serde(default)]
    pub rehearsal_per_domain: usize,
    /// Train one set of parameters on all tasks at once.
    #[serde(default)]
    pub mtl: bool,
}

fn default_head() -> HeadMode {
    HeadMode::Verbalizer
}

fn default_init() -> InitStrategy {
    InitStrategy::Random
}

impl MethodConfig {
    pub fn new(learner: Learner) -> Self {
        Self {
            learner,
            head: HeadMode::Verbalizer,
            init: InitStrategy::Random,
            tphnet: false,
            rehearsal_per_domain: 0,
            mtl: false,
        }
    }

    pub fn cpt_rd(init: InitStrategy) -> Self {
        Self {
            init,
            ..Self::new(Learner::CptRd)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.tphnet && self.learner != Learner::CptRd {
            return bad("the hypernetwork requires the cpt-rd learner");
        }
        if self.init != InitStrategy::Random && self.learner != Learner::CptRd {
            return bad("library initializations require the cpt-rd learner");
        }
        if self.mtl && (self.tphnet || self.rehearsal_per_domain > 0) {
            return bad("multi-task training excludes the hypernetwork and rehearsal");
        }
        if self.mtl && self.init != InitStrategy::Random {
            return bad("multi-task training has no prompt library to initialize from");
        }
        Ok(())
    }

    /// Where this method places its prompt.
    pub fn injection(&self) -> InjectionMode {
        match self.learner {
            Learner::PromptTuning => InjectionMode::Shallow,
            _ => InjectionMode::Deep,
        }
    }

    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        base.with_injection(self.injection()).with_head(self.head)
    }

    pub fn tuning_mode(&self) -> TuningMode {
        match (self.learner, self.tphnet) {
            (Learner::Finetune, _) => TuningMode::Finetune,
            (Learner::PromptTuning, _) => TuningMode::ShallowPrompt,
            (_, true) => TuningMode::DeepPromptTphnet,
            _ => TuningMode::DeepPrompt,
        }
    }

    /// Short identifier used for output directories.
    pub fn label(&self) -> String {
        let mut s = match self.learner {
            Learner::Finetune => "finetune".to_string(),
            Learner::PromptTuning => "pt".to_string(),
            Learner::PTuningV2 => "ptv2".to_string(),
            Learner::CptRd => format!("cpt-rd-{}", self.init.as_str()),
        };
        match (self.learner, self.head) {
            (Learner::CptRd, HeadMode::Verbalizer) => {}
            (_, HeadMode::Cls) => s.push_str("-cls"),
            (_, HeadMode::Verbalizer) => s.push_str("-ver"),
        }
        if self.tphnet {
            s.push_str("-tphnet");
        }
        if self.rehearsal_per_domain > 0 {
            s.push_str(&format!("-rehearsal{}", self.rehearsal_per_domain));
        }
        if self.mtl {
            s.push_str("-mtl");
        }
        s
    }
}

impl std::str::FromStr for MethodConfig {
    type Err = Error;

    /// Parse a label such as `cpt-rd-siminit-tphnet` or `ptv2-cls-mtl`.
    fn from_str(name: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown method {name:?}"));
        let (learner, rest) = if let Some(r) = name.strip_prefix("cpt-rd") {
            (Learner::CptRd, r)
        } else if let Some(r) = name.strip_prefix("finetune") {
            (Learner::Finetune, r)
        } else if let Some(r) = name.strip_prefix("ptv2") {
            (Learner::PTuningV2, r)
        } else if let Some(r) = name.strip_prefix("pt") {
            (Learner::PromptTuning, r)
        } else {
            return Err(bad());
        };
        let mut m = Self::new(learner);
        if rest.is_empty() {
            return Ok(m);
        }
        let rest = rest.strip_prefix('-').ok_or_else(bad)?;
        for part in rest.split('-') {
            match part {
                "random" => m.init = InitStrategy::Random,
                "clinit" => m.init = InitStrategy::Clinit,
                "siminit" => m.init = InitStrategy::Siminit,
                "meaninit" => m.init = InitStrategy::Meaninit,
                "cls" => m.head = HeadMode::Cls,
                "ver" => m.head = HeadMode::Verbalizer,
                "tphnet" => m.tphnet = true,
                "mtl" => m.mtl = true,
                p => {
                    let n = p.strip_prefix("rehearsal").and_then(|n| n.parse().ok()).ok_or_else(bad)?;
                    m.rehearsal_per_domain = n;
                }
            }
        }
        m.validate()?;
        Ok(m)
    }
}

/// Optimization settings shared by all learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub prompt_lr: f64,
    pub tphnet_lr: f64,
    pub finetune_lr: f64,
    /// Learning rate of the prompt-tuning and p-tuning v2 baselines.
    pub baseline_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub few_shot_steps: usize,
    pub shots: Vec<usize>,
    pub beta: f64,
    pub bottleneck: usize,
    /// Score few-shot runs on the test split instead of validation.
    pub few_shot_on_test: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            prompt_lr: 7e-3,
            tphnet_lr: 1e-4,
            finetune_lr: 5e-5,
            baseline_lr: 5e-3,
            batch_size: 16,
            max_epochs: 100,
            patience: 4,
            few_shot_steps: 500,
            shots: vec![4, 8, 16],
            beta: 0.01,
            bottleneck: 64,
            few_shot_on_test: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        for (name, lr) in [
            ("prompt_lr", self.prompt_lr),
            ("tphnet_lr", self.tphnet_lr),
            ("finetune_lr", self.finetune_lr),
            ("baseline_lr", self.baseline_lr),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.bottleneck == 0 {
            return bad("batch_size, max_epochs and bottleneck must be positive");
        }
        if self.shots.contains(&0) {
            return bad("shot counts must be positive");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        Ok(())
    }

    pub fn lr_for(&self, learner: Learner) -> f64 {
        match learner {
            Learner::Finetune => self.finetune_lr,
            Learner::PromptTuning | Learner::PTuningV2 => self.baseline_lr,
            Learner::CptRd => self.prompt_lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_back() {
        let cases = [
            MethodConfig::cpt_rd(InitStrategy::Siminit),
            MethodConfig { tphnet: true, rehearsal_per_domain: 50, ..MethodConfig::cpt_rd(InitStrategy::Meaninit) },
            MethodConfig::new(Learner::Finetune),
            MethodConfig { head: HeadMode::Cls, mtl: true, ..MethodConfig::new(Learner::PTuningV2) },
            MethodConfig::new(Learner::PromptTuning),
            MethodConfig { head: HeadMode::Cls, ..MethodConfig::cpt_rd(InitStrategy::Random) },
        ];
        for m in cases {
            assert_eq!(m.label().parse::<MethodConfig>().unwrap(), m, "{}", m.label());
        }
        assert_eq!("cpt-rd".parse::<MethodConfig>().unwrap(), MethodConfig::cpt_rd(InitStrategy::Random));
        for bad in ["eann", "cpt-rd-fancy", "pt-siminit", "finetune-tphnet", "cpt-rdx", "ptv2-rehearsalx"] {
            assert!(bad.parse::<MethodConfig>().is_err(), "{bad}");
        }
    }

    #[test]
    fn validation_rules() {
        MethodConfig::cpt_rd(InitStrategy::Siminit).validate().unwrap();
        let tph = MethodConfig {
            tphnet: true,
            ..MethodConfig::new(Learner::PTuningV2)
        };
        assert!(tph.validate().is_err());
        let init = MethodConfig {
            init: InitStrategy::Clinit,
            ..MethodConfig::new(Learner::Finetune)
        };
        assert!(init.validate().is_err());
        let mtl = MethodConfig {
            mtl: true,
            rehearsal_per_domain: 5,
            ..MethodConfig::new(Learner::PromptTuning)
        };
        assert!(mtl.validate().is_err());
        let rehearse = MethodConfig {
            rehearsal_per_domain: 50,
            ..MethodConfig::cpt_rd(InitStrategy::Random)
        };
        rehearse.validate().unwrap();
    }

    #[test]
    fn labels_and_modes() {
        let m = MethodConfig {
            tphnet: true,
            ..MethodConfig::cpt_rd(InitStrategy::Siminit)
        };
        assert_eq!(m.label(), "cpt-rd-siminit-tphnet");
        assert_eq!(m.tuning_mode(), TuningMode::DeepPromptTphnet);
        let pt = MethodConfig {
            head: HeadMode::Cls,
            ..MethodConfig::new(Learner::PromptTuning)
        };
        assert_eq!(pt.label(), "pt-cls");
        assert_eq!(pt.injection(), InjectionMode::Shallow);
    }

    #[test]
    fn defaults_match_published_settings() {
        let t = TrainingConfig::default();
        assert_eq!((t.prompt_lr, t.tphnet_lr, t.finetune_lr, t.baseline_lr), (7e-3, 1e-4, 5e-5, 5e-3));
        assert_eq!((t.batch_size, t.max_epochs, t.patience, t.few_shot_steps), (16, 100, 4, 500));
        assert_eq!(t.shots, vec![4, 8, 16]);
        assert_eq!((t.beta, t.bottleneck), (0.01, 64));
        t.validate().unwrap();
    }
}
