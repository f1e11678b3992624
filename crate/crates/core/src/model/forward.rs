use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::model::backbone::{Backbone, BackboneVars};
use crate::model::config::{HeadMode, InjectionMode, ModelConfig};
use crate::model::prompt::SoftPrompt;
use crate::model::verbalizer::{Label, LabelDistribution, Verbalizer};
use crate::model::vocab::{MASK, SEP};

/// A tokenized claim with its comment block and label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub claim: Vec<usize>,
    /// All comments concatenated; one SEP precedes the whole block.
    pub comments: Vec<usize>,
    pub label: Label,
}

/// One position of the input sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    /// Row `i` of a shallow prompt.
    Prompt(usize),
    Token(usize),
}

/// Layout `P, [MASK], X, [SEP], C` after truncation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssembledInput {
    pub slots: Vec<Slot>,
    pub mask_index: usize,
    /// Deep prompts attach to attention instead of occupying slots.
    pub prefixed: bool,
}

impl AssembledInput {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn token_ids(&self) -> Vec<usize> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Slot::Token(t) => Some(*t),
                Slot::Prompt(_) => None,
            })
            .collect()
    }

    fn prompt_rows(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, Slot::Prompt(_)))
            .count()
    }

    /// Embedding rows in slot order (no position embeddings).
    pub fn embed(&self, prompt: Option<&SoftPrompt>, backbone: &Backbone) -> Result<Mat> {
        let d = backbone.token_emb.ncols();
        let mut out = Mat::zeros((self.slots.len(), d));
        for (r, slot) in self.slots.iter().enumerate() {
            let src = match slot {
                Slot::Prompt(i) => prompt
                    .ok_or_else(|| Error::Input("shallow layout needs a prompt".into()))?
                    .values()
                    .row(*i),
                Slot::Token(t) => backbone.token_emb.row(*t),
            };
            out.row_mut(r).assign(&src);
        }
        Ok(out)
    }
}

/// Lay out prompt, MASK, claim, SEP and comments, truncating comments before
/// the claim so the sequence (prompt length included) fits `max_seq`.
pub fn assemble_input(
    prompt: &SoftPrompt,
    claim: &[usize],
    comments: &[usize],
    config: &ModelConfig,
) -> Result<AssembledInput> {
    prompt.check_matches(config)?;
    layout(claim, comments, config, Some(config.injection))
}

/// Layout without any prompt: `[MASK], X, [SEP], C`.
pub fn assemble_unprompted(
    claim: &[usize],
    comments: &[usize],
    config: &ModelConfig,
) -> Result<AssembledInput> {
    layout(claim, comments, config, None)
}

fn layout(
    claim: &[usize],
    comments: &[usize],
    config: &ModelConfig,
    injection: Option<InjectionMode>,
) -> Result<AssembledInput> {
    if claim.is_empty() {
        return Err(Error::Input("empty claim".into()));
    }
    if let Some(bad) = claim.iter().chain(comments).find(|&&t| t >= config.vocab_size) {
        return Err(Error::Input(format!(
            "token id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    let budget = config.max_seq - config.prompt_len - 2;
    let claim_len = claim.len().min(budget);
    let comment_len = comments.len().min(budget - claim_len);

    let mut slots = Vec::with_capacity(config.max_seq);
    if injection == Some(InjectionMode::Shallow) {
        slots.extend((0..config.prompt_len).map(Slot::Prompt));
    }
    let mask_index = slots.len();
    slots.push(Slot::Token(MASK));
    slots.extend(claim[..claim_len].iter().map(|&t| Slot::Token(t)));
    slots.push(Slot::Token(SEP));
    slots.extend(comments[..comment_len].iter().map(|&t| Slot::Token(t)));
    Ok(AssembledInput {
        slots,
        mask_index,
        prefixed: injection == Some(InjectionMode::Deep),
    })
}

/// Tape handles produced by one forward pass.
pub struct ForwardVars {
    /// `1×V` logits at the mask position.
    pub mask_logits: Var,
    /// `1×d` final hidden state at position 0.
    pub first_hidden: Var,
    /// `n×d` final hidden states.
    pub hidden: Var,
}

/// Run the backbone on `input`. `prompt` is the `rows×d` prompt node: the
/// sequence prefix in shallow layouts, per-layer key/value prefixes in deep ones.
pub fn forward(
    tape: &mut Tape,
    bb: &BackboneVars,
    prompt: Option<Var>,
    input: &AssembledInput,
    config: &ModelConfig,
) -> Result<ForwardVars> {
    let n = input.len();
    let shallow_rows = input.prompt_rows();
    let tokens = input.token_ids();
    let tok = tape.gather(bb.token_emb, &tokens);
    let x = if shallow_rows > 0 {
        let p = prompt.ok_or_else(|| Error::Input("shallow layout needs a prompt".into()))?;
        if tape.shape(p).0 != shallow_rows {
            return Err(Error::Shape("prompt rows disagree with layout".into()));
        }
        tape.concat_rows(&[p, tok])
    } else {
        tok
    };
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.gather(bb.pos_emb, &positions);
    let mut x = tape.add(x, pos);

    let deep_prompt = if input.prefixed {
        let p = prompt.ok_or_else(|| Error::Input("deep layout needs a prompt".into()))?;
        if tape.shape(p).0 != config.layers * config.prompt_len {
            return Err(Error::Shape("deep prompt rows disagree with config".into()));
        }
        Some(p)
    } else {
        None
    };

    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    for (li, layer) in bb.layers.iter().enumerate() {
        let a = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias);
        let q = tape.matmul(a, layer.wq);
        let q = tape.add_row(q, layer.bq);
        let kv_in = match deep_prompt {
            Some(p) => {
                let prefix = tape.slice_rows(p, li * config.prompt_len, config.prompt_len);
                tape.concat_rows(&[prefix, a])
            }
            None => a,
        };
        let k = tape.matmul(kv_in, layer.wk);
        let k = tape.add_row(k, layer.bk);
        let v = tape.matmul(kv_in, layer.wv);
        let v = tape.add_row(v, layer.bv);

        let heads: Vec<Var> = (0..config.heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let scores = tape.matmul_bt(qh, kh);
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scores);
                tape.matmul(attn, vh)
            })
            .collect();
        let o = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let o = tape.matmul(o, layer.wo);
        let o = tape.add_row(o, layer.bo);
        x = tape.add(x, o);

        let f = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias);
        let f = tape.matmul(f, layer.ff1_w);
        let f = tape.add_row(f, layer.ff1_b);
        let f = tape.gelu(f);
        let f = tape.matmul(f, layer.ff2_w);
        let f = tape.add_row(f, layer.ff2_b);
        x = tape.add(x, f);

        if !tape.value(x).iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: li });
        }
    }
    let hidden = tape.layer_norm(x, bb.lnf_gain, bb.lnf_bias);

    let m = tape.slice_rows(hidden, input.mask_index, 1);
    let t = tape.matmul(m, bb.mlm_w);
    let t = tape.add_row(t, bb.mlm_b);
    let t = tape.tanh(t);
    let logits = tape.matmul_bt(t, bb.token_emb);
    let mask_logits = tape.add_row(logits, bb.mlm_out_bias);
    let first_hidden = tape.slice_rows(hidden, 0, 1);
    Ok(ForwardVars {
        mask_logits,
        first_hidden,
        hidden,
    })
}

/// `1×2` label scores whose softmax is the label distribution.
pub fn label_scores(
    tape: &mut Tape,
    bb: &BackboneVars,
    out: &ForwardVars,
    head: HeadMode,
    verbalizer: &Verbalizer,
) -> Var {
    match head {
        HeadMode::Verbalizer => tape.group_logsumexp(out.mask_logits, verbalizer.groups()),
        HeadMode::Cls => {
            let s = tape.matmul(out.first_hidden, bb.cls_w);
            tape.add_row(s, bb.cls_b)
        }
    }
}

/// Linear CLS head followed by a two-way softmax.
pub fn classify_cls(first_hidden: &[f64], cls_w: &Mat, cls_b: &Mat) -> LabelDistribution {
    let mut scores = [cls_b[[0, 0]], cls_b[[0, 1]]];
    for (i, h) in first_hidden.iter().enumerate() {
        scores[0] += h * cls_w[[i, 0]];
        scores[1] += h * cls_w[[i, 1]];
    }
    LabelDistribution::from_scores(scores)
}

/// Summed negative log-likelihood of `batch` on an existing tape.
pub fn batch_loss(
    tape: &mut Tape,
    bb: &BackboneVars,
    prompt: Var,
    batch: &[EncodedExample],
    config: &ModelConfig,
    verbalizer: &Verbalizer,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        let input = layout(&ex.claim, &ex.comments, config, Some(config.injection))?;
        let out = forward(tape, bb, Some(prompt), &input, config)?;
        let scores = label_scores(tape, bb, &out, config.head, verbalizer);
        terms.push(tape.nll(scores, ex.label.index()));
    }
    Ok(tape.sum_scalars(&terms))
}

pub(crate) fn check_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NanLoss(loss))
    }
}

/// Summed NLL of `batch` and its gradient with respect to `prompt` only.
pub fn prompt_loss_and_grad(
    batch: &[EncodedExample],
    prompt: &SoftPrompt,
    backbone: &Backbone,
    verbalizer: &Verbalizer,
    config: &ModelConfig,
) -> Result<(f64, SoftPrompt)> {
    prompt.check_matches(config)?;
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape, false);
    let p = tape.param(prompt.values().clone());
    let loss = batch_loss(&mut tape, &bb, p, batch, config, verbalizer)?;
    let value = check_loss(tape.scalar(loss))?;
    let grads = tape.backward(loss);
    let g = grads.get_or_zeros(p, prompt.values().dim());
    Ok((
        value,
        SoftPrompt::new(g, prompt.injection(), prompt.prompt_len())?,
    ))
}

/// Summed NLL and gradients for the prompt and every backbone tensor.
pub fn full_loss_and_grads(
    batch: &[EncodedExample],
    prompt: &SoftPrompt,
    backbone: &Backbone,
    verbalizer: &Verbalizer,
    config: &ModelConfig,
) -> Result<(f64, Mat, Backbone)> {
    prompt.check_matches(config)?;
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape, true);
    let p = tape.param(prompt.values().clone());
    let loss = batch_loss(&mut tape, &bb, p, batch, config, verbalizer)?;
    let value = check_loss(tape.scalar(loss))?;
    let grads = tape.backward(loss);
    let pg = grads.get_or_zeros(p, prompt.values().dim());
    let bg = bb.map(|_, v| grads.get_or_zeros(*v, tape.shape(*v)));
    Ok((value, pg, bg))
}

/// Forward pass outputs as plain vectors.
pub struct Outputs {
    pub mask_logits: Vec<f64>,
    pub first_hidden: Vec<f64>,
}

pub fn run_forward(
    backbone: &Backbone,
    prompt: Option<&SoftPrompt>,
    input: &AssembledInput,
    config: &ModelConfig,
) -> Result<Outputs> {
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape, false);
    let p = prompt.map(|p| tape.constant(p.values().clone()));
    let out = forward(&mut tape, &bb, p, input, config)?;
    Ok(Outputs {
        mask_logits: tape.value(out.mask_logits).iter().copied().collect(),
        first_hidden: tape.value(out.first_hidden).iter().copied().collect(),
    })
}

/// Label distribution for each example under `prompt`.
pub fn predict_distributions(
    examples: &[EncodedExample],
    prompt: &SoftPrompt,
    backbone: &Backbone,
    verbalizer: &Verbalizer,
    config: &ModelConfig,
) -> Result<Vec<LabelDistribution>> {
    prompt.check_matches(config)?;
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape, false);
    let p = tape.constant(prompt.values().clone());
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let input = layout(&ex.claim, &ex.comments, config, Some(config.injection))?;
        let fv = forward(&mut tape, &bb, Some(p), &input, config)?;
        let scores = label_scores(&mut tape, &bb, &fv, config.head, verbalizer);
        let s = tape.value(scores);
        out.push(LabelDistribution::from_scores([s[[0, 0]], s[[0, 1]]]));
    }
    Ok(out)
}

pub fn predict(
    examples: &[EncodedExample],
    prompt: &SoftPrompt,
    backbone: &Backbone,
    verbalizer: &Verbalizer,
    config: &ModelConfig,
) -> Result<Vec<Label>> {
    Ok(
        predict_distributions(examples, prompt, backbone, verbalizer, config)?
            .iter()
            .map(LabelDistribution::argmax)
            .collect(),
    )
}

/// Mean-pooled final hidden states of the unprompted backbone, averaged over
/// examples: a `d`-dimensional task embedding.
pub fn task_encode(
    examples: &[EncodedExample],
    backbone: &Backbone,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Input("cannot encode an empty task".into()));
    }
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape, false);
    let mut acc = vec![0.0; config.hidden];
    for ex in examples {
        let input = assemble_unprompted(&ex.claim, &ex.comments, config)?;
        let out = forward(&mut tape, &bb, None, &input, config)?;
        let pooled = tape.mean_rows(out.hidden);
        for (a, v) in acc.iter_mut().zip(tape.value(pooled).iter()) {
            *a += v;
        }
    }
    let n = examples.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vocab::Vocabulary;

    fn config(injection: InjectionMode) -> ModelConfig {
        ModelConfig {
            vocab_size: 24,
            hidden: 8,
            layers: 2,
            heads: 2,
            prompt_len: 2,
            max_seq: 10,
            injection,
            head: HeadMode::Verbalizer,
        }
    }

    fn ex(claim: &[usize], comments: &[usize], label: Label) -> EncodedExample {
        EncodedExample {
            claim: claim.to_vec(),
            comments: comments.to_vec(),
            label,
        }
    }

    #[test]
    fn shallow_layout_matches_input_order() {
        let c = config(InjectionMode::Shallow);
        let p = SoftPrompt::random(&c, 0);
        let a = assemble_input(&p, &[7, 8], &[9], &c).unwrap();
        use Slot::*;
        assert_eq!(
            a.slots,
            vec![Prompt(0), Prompt(1), Token(MASK), Token(7), Token(8), Token(SEP), Token(9)]
        );
        assert_eq!(a.mask_index, 2);
        let b = assemble_input(&p, &[7, 8], &[], &c).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b.mask_index, 2);
    }

    #[test]
    fn deep_layout_has_no_prompt_slots() {
        let c = config(InjectionMode::Deep);
        let p = SoftPrompt::random(&c, 0);
        let a = assemble_input(&p, &[7, 8], &[9], &c).unwrap();
        assert_eq!(a.mask_index, 0);
        assert_eq!(a.len(), 5);
        assert!(a.prefixed);
    }

    #[test]
    fn truncation_drops_comments_first() {
        let c = config(InjectionMode::Shallow);
        let p = SoftPrompt::random(&c, 0);
        // budget for claim + comments = 10 - 2 - 2 = 6
        let a = assemble_input(&p, &[10, 11, 12, 13], &[14, 15, 16, 17], &c).unwrap();
        assert_eq!(a.len(), c.max_seq);
        let toks: Vec<_> = a.slots.iter().filter(|s| matches!(s, Slot::Token(_))).collect();
        assert_eq!(toks.len(), 2 + 6);
        assert_eq!(a.slots[3..7], [10, 11, 12, 13].map(Slot::Token));
        assert_eq!(a.slots[8..], [14, 15].map(Slot::Token));
        // an oversized claim is cut to the budget, comments vanish
        let long: Vec<usize> = (10..20).collect();
        let b = assemble_input(&p, &long, &[14], &c).unwrap();
        assert_eq!(b.len(), c.max_seq);
        assert_eq!(*b.slots.last().unwrap(), Slot::Token(SEP));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let c = config(InjectionMode::Shallow);
        let p = SoftPrompt::random(&c, 0);
        assert!(assemble_input(&p, &[], &[1], &c).is_err());
        let deep = SoftPrompt::random(&config(InjectionMode::Deep), 0);
        assert!(assemble_input(&deep, &[7], &[], &c).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let c = config(InjectionMode::Deep);
        let bb = Backbone::init(&c, 1);
        let p = SoftPrompt::random(&c, 2);
        let a = assemble_input(&p, &[11, 12, 13], &[14], &c).unwrap();
        let x = run_forward(&bb, Some(&p), &a, &c).unwrap();
        let y = run_forward(&bb, Some(&p), &a, &c).unwrap();
        assert_eq!(x.mask_logits, y.mask_logits);
        assert_eq!(x.mask_logits.len(), c.vocab_size);
    }

    #[test]
    fn zeroed_output_head_gives_uniform_vocab() {
        let c = config(InjectionMode::Shallow);
        let mut bb = Backbone::init(&c, 1);
        bb.zero_output_head();
        let p = SoftPrompt::random(&c, 2);
        let a = assemble_input(&p, &[11, 12], &[], &c).unwrap();
        let out = run_forward(&bb, Some(&p), &a, &c).unwrap();
        assert!(out.mask_logits.iter().all(|&v| v == 0.0));
        let v = Verbalizer::standard(&Vocabulary::new(["a"]));
        let d = v.verbalize(&out.mask_logits).unwrap();
        assert_eq!(d.0, [0.5, 0.5]);
    }

    #[test]
    fn deep_prefix_changes_logits() {
        let c = config(InjectionMode::Deep);
        let bb = Backbone::init(&c, 1);
        let zero = SoftPrompt::zeros(&c);
        let p = SoftPrompt::random(&c, 5);
        let a = assemble_input(&p, &[11, 12], &[13], &c).unwrap();
        let with = run_forward(&bb, Some(&p), &a, &c).unwrap();
        let without = run_forward(&bb, Some(&zero), &a, &c).unwrap();
        assert_ne!(with.mask_logits, without.mask_logits);
        // shallow placement of the same first-layer prefix differs as well
        let cs = config(InjectionMode::Shallow);
        let ps = SoftPrompt::new(p.layer(0).to_owned(), InjectionMode::Shallow, 2).unwrap();
        let s = assemble_input(&ps, &[11, 12], &[13], &cs).unwrap();
        let shallow = run_forward(&bb, Some(&ps), &s, &cs).unwrap();
        assert_ne!(with.mask_logits, shallow.mask_logits);
    }

    #[test]
    fn cls_head_cases() {
        let w = Mat::zeros((3, 2));
        let d = classify_cls(&[0.3, -1.0, 2.0], &w, &Mat::zeros((1, 2)));
        assert_eq!(d.0, [0.5, 0.5]);
        let b = Mat::from_shape_vec((1, 2), vec![0.0, 10.0]).unwrap();
        let d = classify_cls(&[0.3, -1.0, 2.0], &w, &b);
        assert!(d.prob(Label::Rumor) > 0.9999);
    }

    #[test]
    fn cls_head_matches_matmul_softmax_oracle() {
        let c = config(InjectionMode::Shallow).with_head(HeadMode::Cls);
        let bb = Backbone::init(&c, 9);
        let p = SoftPrompt::random(&c, 4);
        let batch = [ex(&[11, 12], &[13], Label::Rumor)];
        let via_tape = predict_distributions(&batch, &p, &bb, &Verbalizer::standard(&Vocabulary::new(["a"])), &c).unwrap();
        let a = assemble_input(&p, &[11, 12], &[13], &c).unwrap();
        let h = run_forward(&bb, Some(&p), &a, &c).unwrap().first_hidden;
        // oracle: explicit dot products and softmax
        let z: Vec<f64> = (0..2)
            .map(|j| bb.cls_b[[0, j]] + (0..h.len()).map(|i| h[i] * bb.cls_w[[i, j]]).sum::<f64>())
            .collect();
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let oracle = e[1] / (e[0] + e[1]);
        assert!((via_tape[0].prob(Label::Rumor) - oracle).abs() < 1e-12);
        assert!((classify_cls(&h, &bb.cls_w, &bb.cls_b).prob(Label::Rumor) - oracle).abs() < 1e-12);
    }

    #[test]
    fn verbalize_agrees_with_tape_scores() {
        let c = config(InjectionMode::Deep);
        let bb = Backbone::init(&c, 1);
        let p = SoftPrompt::random(&c, 2);
        let v = Verbalizer::new(vec![6, 7], vec![8, 9], c.vocab_size).unwrap();
        let batch = [ex(&[11, 12], &[13], Label::NonRumor)];
        let via_tape = predict_distributions(&batch, &p, &bb, &v, &c).unwrap()[0];
        let a = assemble_input(&p, &[11, 12], &[13], &c).unwrap();
        let logits = run_forward(&bb, Some(&p), &a, &c).unwrap().mask_logits;
        let direct = v.verbalize(&logits).unwrap();
        assert!((via_tape.0[0] - direct.0[0]).abs() < 1e-12);
    }

    #[test]
    fn loss_edge_cases() {
        let c = config(InjectionMode::Shallow);
        let mut bb = Backbone::init(&c, 1);
        bb.zero_output_head();
        let v = Verbalizer::new(vec![6], vec![8], c.vocab_size).unwrap();
        let p = SoftPrompt::random(&c, 2);
        let batch = [ex(&[11], &[], Label::Rumor), ex(&[12], &[13], Label::NonRumor)];
        let (loss, grad) = prompt_loss_and_grad(&batch, &p, &bb, &v, &c).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(grad.values().dim(), p.values().dim());

        // saturate the rumor word: a confident correct model has ~zero loss
        bb.mlm_out_bias[[0, 8]] = 800.0;
        let (loss, _) =
            prompt_loss_and_grad(&batch[..1], &p, &bb, &v, &c).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(prompt_loss_and_grad(&[], &p, &bb, &v, &c).is_err());
    }

    #[test]
    fn task_encoding_averages_examples() {
        let c = config(InjectionMode::Deep);
        let bb = Backbone::init(&c, 3);
        let a = ex(&[11, 12], &[13], Label::Rumor);
        let b = ex(&[14], &[15, 16], Label::NonRumor);
        let za = task_encode(std::slice::from_ref(&a), &bb, &c).unwrap();
        let zb = task_encode(std::slice::from_ref(&b), &bb, &c).unwrap();
        let rep = task_encode(&[a.clone(), a.clone(), a.clone()], &bb, &c).unwrap();
        for (x, y) in za.iter().zip(&rep) {
            assert!((x - y).abs() < 1e-12);
        }
        let both = task_encode(&[a, b], &bb, &c).unwrap();
        for i in 0..c.hidden {
            assert!((both[i] - 0.5 * (za[i] + zb[i])).abs() < 1e-12);
        }
        assert_eq!(both.len(), c.hidden);
        assert!(task_encode(&[], &bb, &c).is_err());
    }

    #[test]
    fn non_finite_activation_reports_layer() {
        let c = config(InjectionMode::Shallow);
        let mut bb = Backbone::init(&c, 1);
        bb.layers[1].ff2_b.fill(f64::INFINITY);
        let p = SoftPrompt::random(&c, 2);
        let a = assemble_input(&p, &[11], &[], &c).unwrap();
        match run_forward(&bb, Some(&p), &a, &c) {
            Err(Error::NonFinite { layer }) => assert_eq!(layer, 1),
            other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
        }
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn numeric(f: &dyn Fn(&Mat) -> f64, x: &Mat, coords: &[(usize, usize)]) -> Vec<f64> {
        coords
            .iter()
            .map(|&(i, j)| {
                let mut p = x.clone();
                p[[i, j]] += 1e-5;
                let mut m = x.clone();
                m[[i, j]] -= 1e-5;
                (f(&p) - f(&m)) / 2e-5
            })
            .collect()
    }

    fn check(injection: InjectionMode, head: HeadMode) {
        let c = ModelConfig {
            vocab_size: 20,
            hidden: 8,
            layers: 2,
            heads: 2,
            prompt_len: 2,
            max_seq: 12,
            injection,
            head,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bb = Backbone::init(&c, 3);
        let p = SoftPrompt::random(&c, 4);
        let v = Verbalizer::new(vec![6, 7], vec![8, 9], c.vocab_size).unwrap();
        let batch: Vec<_> = (0..3)
            .map(|i| EncodedExample {
                claim: (0..3).map(|_| rng.random_range(10..20)).collect(),
                comments: (0..2).map(|_| rng.random_range(10..20)).collect(),
                label: Label::from_index(i % 2),
            })
            .collect();
        let (_, pg, bg) = full_loss_and_grads(&batch, &p, &bb, &v, &c).unwrap();
        let coords: Vec<_> = (0..pg.nrows()).flat_map(|i| (0..pg.ncols()).map(move |j| (i, j))).collect();
        let f = |x: &Mat| {
            let q = SoftPrompt::new(x.clone(), injection, c.prompt_len).unwrap();
            prompt_loss_and_grad(&batch, &q, &bb, &v, &c).unwrap().0
        };
        let num = numeric(&f, p.values(), &coords);
        for (k, &(i, j)) in coords.iter().enumerate() {
            let a = pg[[i, j]];
            assert!((a - num[k]).abs() <= 1e-6 * a.abs().max(num[k].abs()).max(1e-3), "prompt {i},{j}: {a} vs {}", num[k]);
        }
        for (idx, (name, g)) in bg.named().into_iter().enumerate() {
            let f = |x: &Mat| {
                let mut b2 = bb.clone();
                *b2.tensors_mut()[idx] = x.clone();
                prompt_loss_and_grad(&batch, &p, &b2, &v, &c).unwrap().0
            };
            let x = bb.named()[idx].1.clone();
            let coords: Vec<_> = (0..4).map(|_| (rng.random_range(0..x.nrows()), rng.random_range(0..x.ncols()))).collect();
            let num = numeric(&f, &x, &coords);
            for (k, &(i, j)) in coords.iter().enumerate() {
                let a = g[[i, j]];
                assert!((a - num[k]).abs() <= 1e-6 * a.abs().max(num[k].abs()).max(1e-3), "{name} {i},{j}: {a} vs {}", num[k]);
            }
        }
    }

    #[test]
    fn deep_verbalizer_gradients() {
        check(InjectionMode::Deep, HeadMode::Verbalizer);
    }

    #[test]
    fn shallow_cls_gradients() {
        check(InjectionMode::Shallow, HeadMode::Cls);
    }
}
