use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{few_shot, EncodedTask};
use crate::error::{Error, Result};
use crate::harness::metrics::{avg_f1, bwt, f1_score, fs_f1, fwt, Metrics, RMatrix};
use crate::harness::method::{InitStrategy, Learner, MethodConfig, TrainingConfig};
use crate::harness::rehearsal::RehearsalBuffer;
use crate::model::{
    full_loss_and_grads, predict_distributions, prompt_loss_and_grad, task_encode, Backbone,
    EncodedExample, Label, ModelConfig, SoftPrompt, Verbalizer,
};
use crate::prompt_store::{init_clinit, init_meaninit, init_siminit, SourcePromptLibrary};
use crate::seed;
use crate::tphnet::{self, TphnetParams};

/// On equal validation F1, an epoch counts as an improvement only if the
/// validation loss falls by at least this fraction.
pub const LOSS_MIN_DELTA: f64 = 0.01;

/// Outcome of one task's zero-, few- and full-shot stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub task_id: usize,
    pub task: String,
    pub init: InitStrategy,
    /// Library task whose prompt seeded the zero-shot stage.
    pub source_task: Option<usize>,
    pub zero_shot_f1: Option<f64>,
    pub few_shot_f1: BTreeMap<usize, f64>,
    pub full_shot_f1: Option<f64>,
    pub epochs: usize,
    /// Library entries overwritten by consolidation after this task.
    pub replaced: Vec<usize>,
    pub digest_before: String,
    pub digest_after: String,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub rmatrix: RMatrix,
    pub stages: Vec<StageRecord>,
    pub library: SourcePromptLibrary,
    pub metrics: Metrics,
    pub initial_digest: String,
    pub final_digest: String,
}

#[derive(Clone, Debug)]
enum Params {
    Prompt(SoftPrompt),
    Full { prompt: SoftPrompt, backbone: Backbone },
    Hyper { net: TphnetParams, z: Vec<f64> },
}

/// Prior prompts for the hypernetwork penalty of task `k`.
struct Regularizer<'a> {
    library: &'a SourcePromptLibrary,
    k: usize,
}

/// Runs task streams against a shared frozen backbone.
pub struct Harness<'a> {
    pub backbone: &'a Backbone,
    pub verbalizer: &'a Verbalizer,
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

struct Ctx<'a> {
    shared: &'a Backbone,
    verbalizer: &'a Verbalizer,
    config: ModelConfig,
    training: &'a TrainingConfig,
    lr: f64,
}

impl Ctx<'_> {
    fn prompt_of(&self, params: &Params) -> Result<SoftPrompt> {
        match params {
            Params::Prompt(p) | Params::Full { prompt: p, .. } => Ok(p.clone()),
            Params::Hyper { net, z } => tphnet::generate(net, z, &self.config),
        }
    }

    fn backbone_of<'b>(&'b self, params: &'b Params) -> &'b Backbone {
        match params {
            Params::Full { backbone, .. } => backbone,
            _ => self.shared,
        }
    }

    /// Test-style F1 and mean negative log-likelihood.
    fn evaluate(&self, params: &Params, examples: &[EncodedExample]) -> Result<(f64, f64)> {
        let prompt = self.prompt_of(params)?;
        let dists = predict_distributions(
            examples,
            &prompt,
            self.backbone_of(params),
            self.verbalizer,
            &self.config,
        )?;
        let preds: Vec<Label> = dists.iter().map(|d| d.argmax()).collect();
        let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
        let loss = dists
            .iter()
            .zip(&labels)
            .map(|(d, &y)| -d.prob(y).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / examples.len() as f64;
        Ok((f1_score(&preds, &labels)?, loss))
    }

    fn f1(&self, params: &Params, examples: &[EncodedExample]) -> Result<f64> {
        Ok(self.evaluate(params, examples)?.0)
    }

    fn step(
        &self,
        params: &mut Params,
        batch: &[EncodedExample],
        reg: Option<&Regularizer>,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let lr = self.lr;
        match params {
            Params::Prompt(p) => {
                let (loss, g) = prompt_loss_and_grad(batch, p, self.shared, self.verbalizer, &self.config)?;
                p.values_mut().scaled_add(-lr, g.values());
                Ok(loss)
            }
            Params::Full { prompt, backbone } => {
                let (loss, pg, bg) =
                    full_loss_and_grads(batch, prompt, backbone, self.verbalizer, &self.config)?;
                prompt.values_mut().scaled_add(-lr, &pg);
                for (w, (_, g)) in backbone.tensors_mut().into_iter().zip(bg.named()) {
                    w.scaled_add(-lr, g);
                }
                Ok(loss)
            }
            Params::Hyper { net, z } => {
                let (prior, k) = match reg {
                    Some(r) => (tphnet::sample_prior(r.library, rng).map(|e| &e.prompt), r.k),
                    None => (None, 1),
                };
                let (loss, g) = tphnet::loss_and_grads(
                    batch,
                    net,
                    z,
                    prior,
                    k,
                    self.training.beta,
                    self.shared,
                    self.verbalizer,
                    &self.config,
                )?;
                let hl = self.training.tphnet_lr;
                net.w1.scaled_add(-hl, &g.w1);
                net.b1.scaled_add(-hl, &g.b1);
                net.w2.scaled_add(-hl, &g.w2);
                net.b2.scaled_add(-hl, &g.b2);
                for (zi, gi) in z.iter_mut().zip(&g.z) {
                    *zi -= lr * gi;
                }
                Ok(loss)
            }
        }
    }

    /// Fixed number of SGD steps over a cycled, reshuffled set.
    fn train_steps(&self, params: &mut Params, data: &[EncodedExample], steps: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let bs = self.training.batch_size.min(data.len());
        let mut order: Vec<usize> = Vec::new();
        let mut batch = Vec::with_capacity(bs);
        for _ in 0..steps {
            batch.clear();
            while batch.len() < bs {
                if order.is_empty() {
                    order = (0..data.len()).collect();
                    order.shuffle(rng);
                }
                batch.push(data[order.pop().expect("non-empty order")].clone());
            }
            self.step(params, &batch, None, rng)?;
        }
        Ok(())
    }

    /// Epoch training with early stopping on validation (F1 first, then a
    /// relative loss drop of at least [`LOSS_MIN_DELTA`]), returning the best parameters and the number of epochs run.
    fn train_full(
        &self,
        mut params: Params,
        train: &[EncodedExample],
        validation: &[EncodedExample],
        reg: Option<&Regularizer>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Params, usize)> {
        let mut best: Option<(f64, f64, Params)> = None;
        let mut stale = 0;
        let mut epochs = 0;
        let mut data = train.to_vec();
        for _ in 0..self.training.max_epochs {
            epochs += 1;
            data.shuffle(rng);
            for batch in data.chunks(self.training.batch_size) {
                self.step(&mut params, batch, reg, rng)?;
            }
            let (f1, loss) = self.evaluate(&params, validation)?;
            let improved = match &best {
                None => true,
                Some((bf, bl, _)) => f1 > *bf || (f1 == *bf && loss < *bl * (1.0 - LOSS_MIN_DELTA)),
            };
            if improved {
                best = Some((f1, loss, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.training.patience {
                    break;
                }
            }
        }
        let (_, _, p) = best.expect("at least one epoch");
        Ok((p, epochs))
    }
}

fn check_task(task: &EncodedTask) -> Result<()> {
    for (name, split) in [("train", &task.train), ("validation", &task.validation), ("test", &task.test)] {
        if split.is_empty() {
            return Err(Error::Harness(format!("task {} has an empty {name} split", task.name)));
        }
    }
    Ok(())
}

impl Harness<'_> {
    fn ctx(&self, method: &MethodConfig) -> Ctx<'_> {
        Ctx {
            shared: self.backbone,
            verbalizer: self.verbalizer,
            config: method.model_config(&self.model),
            training: &self.training,
            lr: self.training.lr_for(method.learner),
        }
    }

    /// Run every task of `tasks` in order under `method`.
    pub fn run_stream(&self, tasks: &[EncodedTask], method: &MethodConfig, seed: u64) -> Result<RunResult> {
        method.validate()?;
        self.training.validate()?;
        self.model.validate()?;
        if tasks.len() < 2 {
            return Err(Error::Harness("a stream needs at least two tasks".into()));
        }
        for t in tasks {
            check_task(t)?;
        }
        let ctx = self.ctx(method);
        let n = tasks.len();
        let initial_digest = self.backbone.digest();
        let initial_seed = seed::derive(seed, "initial", 0);
        let initial_prompt = SoftPrompt::random(&ctx.config, initial_seed);
        let mut current = match method.learner {
            Learner::Finetune => Params::Full {
                prompt: initial_prompt.clone(),
                backbone: self.backbone.clone(),
            },
            _ => Params::Prompt(initial_prompt.clone()),
        };

        let mut r = RMatrix::new(n);
        for (i, t) in tasks.iter().enumerate() {
            r.set(0, i + 1, ctx.f1(&current, &t.test)?)?;
        }
        if method.mtl {
            return self.finish_mtl(&ctx, tasks, current, r, seed, initial_digest);
        }

        let mut library = SourcePromptLibrary::new();
        let mut buffer = RehearsalBuffer::new(method.rehearsal_per_domain);
        let mut hyper = if method.tphnet {
            let base = SoftPrompt::random(&ctx.config, seed::derive(seed, "tphnet-base", 0));
            Some(TphnetParams::init(&ctx.config, self.training.bottleneck, &base, seed::derive(seed, "tphnet", 0))?)
        } else {
            None
        };
        let mut stages = Vec::with_capacity(n);

        for k in 1..=n {
            let task = &tasks[k - 1];
            let digest_before = self.backbone.digest();
            let z = task_encode(&task.train, self.backbone, &ctx.config)?;

            // zero-shot
            let (init, source) = if method.learner == Learner::CptRd {
                let fallback = if library.is_empty() {
                    initial_seed
                } else {
                    seed::derive(seed, "zero-init", k as u64)
                };
                let (p, src) = match method.init {
                    InitStrategy::Random => (SoftPrompt::random(&ctx.config, fallback), None),
                    InitStrategy::Clinit => (
                        init_clinit(&library, &ctx.config, fallback),
                        library.last().map(|e| e.task_id),
                    ),
                    InitStrategy::Siminit => init_siminit(&library, &z, &ctx.config, fallback)?,
                    InitStrategy::Meaninit => (init_meaninit(&library, &ctx.config, fallback)?, None),
                };
                (Params::Prompt(p), src)
            } else {
                (current.clone(), None)
            };
            let zero = ctx.f1(&init, &task.test)?;
            r.set(k - 1, k, zero)?;

            // few-shot, discarded afterwards
            let mut few = BTreeMap::new();
            for &shots in &self.training.shots {
                let subset = few_shot(&task.train, |x| x.label, shots, seed::derive(seed, "few-shot", k as u64))?;
                let mut p = init.clone();
                let mut rng = seed::rng(seed, "few-train", (k * 1000 + shots) as u64);
                ctx.train_steps(&mut p, &subset, self.training.few_shot_steps, &mut rng)?;
                let eval = if self.training.few_shot_on_test { &task.test } else { &task.validation };
                few.insert(shots, ctx.f1(&p, eval)?);
            }

            // full-shot
            let mut train = task.train.clone();
            train.extend_from_slice(buffer.items());
            let mut rng = seed::rng(seed, "epochs", k as u64);
            let mut replaced = Vec::new();
            let (full, epochs) = if method.learner == Learner::CptRd {
                let (prompt, epochs) = match hyper.as_mut() {
                    Some(net) => {
                        let reg = Regularizer { library: &library, k };
                        let start = Params::Hyper { net: net.clone(), z: z.clone() };
                        let (best, epochs) = ctx.train_full(start, &train, &task.validation, Some(&reg), &mut rng)?;
                        let prompt = ctx.prompt_of(&best)?;
                        if let Params::Hyper { net: trained, .. } = best {
                            *net = trained;
                        }
                        (prompt, epochs)
                    }
                    None => {
                        let start = Params::Prompt(SoftPrompt::random(&ctx.config, seed::derive(seed, "full-init", k as u64)));
                        let (best, epochs) = ctx.train_full(start, &train, &task.validation, None, &mut rng)?;
                        (ctx.prompt_of(&best)?, epochs)
                    }
                };
                let f1 = ctx.f1(&Params::Prompt(prompt.clone()), &task.test)?;
                library.store(k, &prompt, &z, f1)?;
                if method.tphnet {
                    replaced = tphnet::consolidate(&mut library, &prompt, |id, p| {
                        if id == k {
                            return Ok(f1);
                        }
                        ctx.f1(&Params::Prompt(p.clone()), &tasks[id - 1].test)
                    })?;
                    replaced.retain(|&id| id != k);
                }
                for i in 1..=k {
                    let stored = library.get(i).expect("every finished task is stored");
                    r.set(k, i, ctx.f1(&Params::Prompt(stored.prompt.clone()), &tasks[i - 1].test)?)?;
                }
                (f1, epochs)
            } else {
                let (best, epochs) = ctx.train_full(current.clone(), &train, &task.validation, None, &mut rng)?;
                current = best;
                for i in 1..=k {
                    r.set(k, i, ctx.f1(&current, &tasks[i - 1].test)?)?;
                }
                (r.get(k, k).expect("just set"), epochs)
            };
            buffer.add_domain(&task.train, seed::derive(seed, "rehearsal", k as u64));

            stages.push(StageRecord {
                task_id: k,
                task: task.name.clone(),
                init: method.init,
                source_task: source,
                zero_shot_f1: Some(zero),
                few_shot_f1: few,
                full_shot_f1: Some(full),
                epochs,
                replaced,
                digest_before,
                digest_after: self.backbone.digest(),
            });
        }

        let mut fs = BTreeMap::new();
        for &shots in &self.training.shots {
            let per_task: Vec<f64> = stages.iter().map(|s| s.few_shot_f1[&shots]).collect();
            fs.insert(shots, fs_f1(&per_task)?);
        }
        let metrics = Metrics {
            avg_f1: avg_f1(&r)?,
            fwt: fwt(&r)?,
            bwt: bwt(&r)?,
            fs_f1: fs,
        };
        Ok(RunResult {
            rmatrix: r,
            stages,
            library,
            metrics,
            initial_digest,
            final_digest: self.backbone.digest(),
        })
    }

    fn finish_mtl(
        &self,
        ctx: &Ctx,
        tasks: &[EncodedTask],
        start: Params,
        mut r: RMatrix,
        seed: u64,
        initial_digest: String,
    ) -> Result<RunResult> {
        let n = tasks.len();
        let digest_before = self.backbone.digest();
        let train: Vec<_> = tasks.iter().flat_map(|t| t.train.iter().cloned()).collect();
        let validation: Vec<_> = tasks.iter().flat_map(|t| t.validation.iter().cloned()).collect();
        let mut rng = seed::rng(seed, "epochs", 0);
        let (best, epochs) = ctx.train_full(start, &train, &validation, None, &mut rng)?;
        let mut stages = Vec::with_capacity(n);
        for (i, t) in tasks.iter().enumerate() {
            let f1 = ctx.f1(&best, &t.test)?;
            r.set(n, i + 1, f1)?;
            stages.push(StageRecord {
                task_id: i + 1,
                task: t.name.clone(),
                init: InitStrategy::Random,
                source_task: None,
                zero_shot_f1: None,
                few_shot_f1: BTreeMap::new(),
                full_shot_f1: Some(f1),
                epochs,
                replaced: Vec::new(),
                digest_before: digest_before.clone(),
                digest_after: self.backbone.digest(),
            });
        }
        Ok(RunResult {
            metrics: Metrics {
                avg_f1: avg_f1(&r)?,
                fwt: None,
                bwt: None,
                fs_f1: BTreeMap::new(),
            },
            rmatrix: r,
            stages,
            library: SourcePromptLibrary::new(),
            initial_digest,
            final_digest: self.backbone.digest(),
        })
    }
}
