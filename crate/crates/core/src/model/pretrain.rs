use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape};
use crate::error::{Error, Result};
use crate::model::backbone::Backbone;
use crate::model::config::ModelConfig;
use crate::model::forward::{check_loss, forward, AssembledInput, Slot};
use crate::model::vocab::MASK;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of masking position 0, where the classification mask sits
    /// in deep-prompt inputs; otherwise the position is uniform.
    pub first_position_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 8000,
            batch_size: 16,
            lr: 1e-3,
            first_position_rate: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    /// Mean per-example loss of each step.
    pub losses: Vec<f64>,
}

/// Masked-token example: one position of `seq` replaced by MASK.
fn masked(seq: &[usize], pos: usize, max_seq: usize) -> (AssembledInput, usize) {
    let seq = &seq[..seq.len().min(max_seq)];
    let slots = seq
        .iter()
        .enumerate()
        .map(|(i, &t)| Slot::Token(if i == pos { MASK } else { t }))
        .collect();
    (
        AssembledInput {
            slots,
            mask_index: pos,
            prefixed: false,
        },
        seq[pos],
    )
}

fn check_corpus(corpus: &[Vec<usize>], config: &ModelConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Data("empty pretraining corpus".into()));
    }
    for seq in corpus {
        if seq.is_empty() {
            return Err(Error::Data("empty corpus sequence".into()));
        }
        if let Some(t) = seq.iter().find(|&&t| t >= config.vocab_size) {
            return Err(Error::Data(format!("corpus token {t} outside vocabulary")));
        }
    }
    Ok(())
}

/// Summed masked-token loss of `items` and, when `grads` is set, backbone gradients.
fn mlm_batch(
    backbone: &Backbone,
    items: &[(AssembledInput, usize)],
    config: &ModelConfig,
    grads: bool,
) -> Result<(f64, Option<Backbone>)> {
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape, grads);
    let mut terms = Vec::with_capacity(items.len());
    for (input, target) in items {
        let out = forward(&mut tape, &bb, None, input, config)?;
        terms.push(tape.nll(out.mask_logits, *target));
    }
    let loss = tape.sum_scalars(&terms);
    let value = check_loss(tape.scalar(loss))?;
    if !grads {
        return Ok((value, None));
    }
    let g = tape.backward(loss);
    Ok((value, Some(bb.map(|_, v| g.get_or_zeros(*v, tape.shape(*v))))))
}

/// Masked-language-model pretraining with Adam. The result is rounded to `f32`
/// so that checkpoints reload bit-exactly.
pub fn pretrain(
    backbone: &mut Backbone,
    corpus: &[Vec<usize>],
    config: &ModelConfig,
    settings: &PretrainConfig,
) -> Result<PretrainLog> {
    check_corpus(corpus, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let zeros = backbone.map(|_, m| Mat::zeros(m.dim()));
    let (mut m1, mut m2) = (zeros.clone(), zeros);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut log = PretrainLog::default();
    for step in 1..=settings.steps {
        let items: Vec<_> = (0..settings.batch_size)
            .map(|_| {
                let seq = corpus.choose(&mut rng).expect("corpus is non-empty");
                let len = seq.len().min(config.max_seq);
                let pos = if rng.random_bool(settings.first_position_rate) {
                    0
                } else {
                    rng.random_range(0..len)
                };
                masked(seq, pos, config.max_seq)
            })
            .collect();
        let (loss, grads) = mlm_batch(backbone, &items, config, true)?;
        let grads = grads.expect("gradients requested");
        log.losses.push(loss / items.len() as f64);
        let c1 = 1.0 - b1.powi(step as i32);
        let c2 = 1.0 - b2.powi(step as i32);
        let n = items.len() as f64;
        let params = backbone.tensors_mut();
        let ms = m1.tensors_mut();
        let vs = m2.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads.named()).zip(ms).zip(vs) {
            ndarray::Zip::from(p)
                .and(g.1)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g / n;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= settings.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
    backbone.round_to_f32();
    if !backbone.is_finite() {
        return Err(Error::NanLoss(f64::NAN));
    }
    Ok(log)
}

/// Mean masked-token loss over `corpus`, masking every position of every
/// sequence in turn. Deterministic.
pub fn mlm_loss(backbone: &Backbone, corpus: &[Vec<usize>], config: &ModelConfig) -> Result<f64> {
    check_corpus(corpus, config)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in corpus {
        let len = seq.len().min(config.max_seq);
        let items: Vec<_> = (0..len).map(|p| masked(seq, p, config.max_seq)).collect();
        total += mlm_batch(backbone, &items, config, false)?.0;
        count += len;
    }
    Ok(total / count as f64)
}
