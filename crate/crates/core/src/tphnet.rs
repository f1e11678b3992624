//! Task-conditioned prompt hypernetwork: `g(z) = W2 tanh(W1 z + b1) + b2`.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, Tape, Var};
use crate::container::{Container, DType, Kind, Tensor};
use crate::error::{Error, Result};
use crate::model::forward::{batch_loss, check_loss};
use crate::model::{Backbone, EncodedExample, ModelConfig, SoftPrompt, Verbalizer};
use crate::prompt_store::{SourcePromptLibrary, SplEntry};

/// Default bottleneck width.
pub const BOTTLENECK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TphnetParams {
    /// `d'×d`
    pub w1: Mat,
    /// `1×d'`
    pub b1: Mat,
    /// `n×d'` for a prompt of `n` entries.
    pub w2: Mat,
    /// `1×n`
    pub b2: Mat,
}

impl TphnetParams {
    /// Seeded weights with `b2` set to `base`, so the initial output is `base`
    /// plus a small perturbation.
    pub fn init(config: &ModelConfig, bottleneck: usize, base: &SoftPrompt, seed: u64) -> Result<Self> {
        base.check_matches(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let n = config.prompt_numel();
        let a = 1.0 / (d as f64).sqrt();
        // output weights start at prompt scale so early updates stay near `base`
        let b = 0.1 / ((bottleneck * d) as f64).sqrt();
        Ok(Self {
            w1: Mat::from_shape_fn((bottleneck, d), |_| rng.random_range(-a..a)),
            b1: Mat::zeros((1, bottleneck)),
            w2: Mat::from_shape_fn((n, bottleneck), |_| rng.random_range(-b..b)),
            b2: base.values().clone().into_shape_with_order((1, n)).expect("contiguous prompt"),
        })
    }

    pub fn bottleneck(&self) -> usize {
        self.w1.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check(&self, config: &ModelConfig, z_len: usize) -> Result<()> {
        let (b, d, n) = (self.bottleneck(), config.hidden, config.prompt_numel());
        let ok = self.w1.dim() == (b, d)
            && self.b1.dim() == (1, b)
            && self.w2.dim() == (n, b)
            && self.b2.dim() == (1, n);
        if !ok {
            return Err(Error::Shape("hypernetwork weights disagree with the model config".into()));
        }
        if z_len != d {
            return Err(Error::Shape(format!("task embedding of length {z_len}, expected {d}")));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, path: &Path, config: &ModelConfig) -> Result<()> {
        Container {
            kind: Kind::Tphnet,
            config: config.clone(),
            meta: serde_json::json!({ "bottleneck": self.bottleneck() }),
            tensors: vec![
                Tensor::from_mat("W1", &self.w1, DType::F64),
                Tensor::from_mat("b1", &self.b1, DType::F64),
                Tensor::from_mat("W2", &self.w2, DType::F64),
                Tensor::from_mat("b2", &self.b2, DType::F64),
            ],
        }
        .write(path)
    }

    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind(Kind::Tphnet)?;
        if c.config != *config {
            return Err(Error::Config("hypernetwork was saved for another model config".into()));
        }
        let b = c.meta["bottleneck"]
            .as_u64()
            .ok_or_else(|| Error::Container { offset: 0, msg: "missing bottleneck".into() })? as usize;
        let (d, n) = (config.hidden, config.prompt_numel());
        Ok(Self {
            w1: c.mat("W1", (b, d))?,
            b1: c.mat("b1", (1, b))?,
            w2: c.mat("W2", (n, b))?,
            b2: c.mat("b2", (1, n))?,
        })
    }
}

/// Tape handles for the hypernetwork weights and the task embedding.
pub struct TphnetVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub z: Var,
}

impl TphnetVars {
    pub fn bind(tape: &mut Tape, params: &TphnetParams, z: &[f64]) -> Self {
        Self {
            w1: tape.param(params.w1.clone()),
            b1: tape.param(params.b1.clone()),
            w2: tape.param(params.w2.clone()),
            b2: tape.param(params.b2.clone()),
            z: tape.param(Mat::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector")),
        }
    }

    /// Generated prompt as a `rows×d` node.
    pub fn generate(&self, tape: &mut Tape, config: &ModelConfig) -> Var {
        let h = tape.matmul_bt(self.z, self.w1);
        let h = tape.add_row(h, self.b1);
        let h = tape.tanh(h);
        let o = tape.matmul_bt(h, self.w2);
        let o = tape.add_row(o, self.b2);
        tape.reshape(o, config.prompt_rows(), config.hidden)
    }
}

pub fn generate(params: &TphnetParams, z: &[f64], config: &ModelConfig) -> Result<SoftPrompt> {
    params.check(config, z.len())?;
    let mut tape = Tape::new();
    let vars = TphnetVars::bind(&mut tape, params, z);
    let p = vars.generate(&mut tape, config);
    SoftPrompt::new(tape.value(p).clone(), config.injection, config.prompt_len)
}

/// `base + beta/(k-1) * ||generated - prior||^2` for `k >= 2`; `base` otherwise.
pub fn regularized_loss(
    base_loss: f64,
    generated: &SoftPrompt,
    prior: &SoftPrompt,
    k: usize,
    beta: f64,
) -> Result<f64> {
    if k < 2 {
        return Ok(base_loss);
    }
    Ok(base_loss + beta / (k - 1) as f64 * generated.squared_distance(prior)?)
}

/// A uniformly drawn stored entry; `None` means no regularization this step.
pub fn sample_prior<'a>(library: &'a SourcePromptLibrary, rng: &mut impl Rng) -> Option<&'a SplEntry> {
    library.entries().choose(rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TphnetGrads {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub z: Vec<f64>,
}

/// Regularized batch loss of the generated prompt for task `k` and its
/// gradients with respect to the weights and `z`. The prior is a constant.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads(
    batch: &[EncodedExample],
    params: &TphnetParams,
    z: &[f64],
    prior: Option<&SoftPrompt>,
    k: usize,
    beta: f64,
    backbone: &Backbone,
    verbalizer: &Verbalizer,
    config: &ModelConfig,
) -> Result<(f64, TphnetGrads)> {
    params.check(config, z.len())?;
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape, false);
    let vars = TphnetVars::bind(&mut tape, params, z);
    let prompt = vars.generate(&mut tape, config);
    let mut loss = batch_loss(&mut tape, &bb, prompt, batch, config, verbalizer)?;
    if let (Some(prior), true) = (prior, k >= 2) {
        prior.check_matches(config)?;
        let pv = tape.constant(prior.values().clone());
        let diff = tape.sub(prompt, pv);
        let sq = tape.sum_squares(diff);
        let pen = tape.scale(sq, beta / (k - 1) as f64);
        loss = tape.sum_scalars(&[loss, pen]);
    }
    let value = check_loss(tape.scalar(loss))?;
    let g = tape.backward(loss);
    let grads = TphnetGrads {
        w1: g.get_or_zeros(vars.w1, params.w1.dim()),
        b1: g.get_or_zeros(vars.b1, params.b1.dim()),
        w2: g.get_or_zeros(vars.w2, params.w2.dim()),
        b2: g.get_or_zeros(vars.b2, params.b2.dim()),
        z: g.get_or_zeros(vars.z, (1, z.len())).iter().copied().collect(),
    };
    Ok((value, grads))
}

/// Replace every stored prompt that `final_prompt` matches or beats on its
/// task. All tasks are scored before anything changes, so an evaluator error
/// leaves the library untouched. Returns the replaced task ids.
pub fn consolidate(
    library: &mut SourcePromptLibrary,
    final_prompt: &SoftPrompt,
    mut evaluator: impl FnMut(usize, &SoftPrompt) -> Result<f64>,
) -> Result<Vec<usize>> {
    let mut wins = Vec::new();
    for e in library.entries() {
        let f1 = evaluator(e.task_id, final_prompt).map_err(|err| Error::Evaluation {
            task: e.task_id,
            msg: err.to_string(),
        })?;
        if f1 >= e.recorded_f1 {
            wins.push((e.task_id, f1));
        }
    }
    for &(id, f1) in &wins {
        library.replace(id, final_prompt, f1)?;
    }
    Ok(wins.into_iter().map(|(id, _)| id).collect())
}
