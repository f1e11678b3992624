use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split, DomainTask, RumorExample};
use crate::error::{Error, Result};
use crate::model::vocab::{NON_RUMOR_WORDS, RUMOR_WORDS};
use crate::model::{Label, Vocabulary};
use crate::seed;

/// How cue words map to labels across the domains of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Every domain uses cue group 0 with the same mapping.
    Consistent,
    /// Cue group 0 everywhere; odd domains swap rumor and non-rumor cues.
    Inverted,
    /// Domain `k` uses cue group and style group `k mod 2`.
    Rotated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthStreamConfig {
    pub n_tasks: usize,
    pub examples_per_domain: usize,
    /// Topic words private to each domain.
    pub topic_words: usize,
    pub shared_words: usize,
    /// Cue words per label in each of the two cue groups.
    pub cue_words: usize,
    /// Words in each of the two style groups.
    pub style_words: usize,
    /// Probability that a filler word comes from the shared pool.
    pub shared_fraction: f64,
    pub claim_len: usize,
    pub style_per_claim: usize,
    pub comments: usize,
    pub comment_len: usize,
    pub rule: LabelRule,
    /// Unlabeled sentences for backbone pretraining.
    pub corpus_size: usize,
    /// Share of corpus sentences that open with a label word tied to the cue
    /// through a frame word.
    pub framed_fraction: f64,
    /// Upper bound on the generated vocabulary, reserved ids included.
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for SynthStreamConfig {
    fn default() -> Self {
        Self {
            n_tasks: 5,
            examples_per_domain: 200,
            topic_words: 8,
            shared_words: 16,
            cue_words: 3,
            style_words: 6,
            shared_fraction: 0.25,
            claim_len: 6,
            style_per_claim: 2,
            comments: 2,
            comment_len: 3,
            rule: LabelRule::Consistent,
            corpus_size: 6000,
            framed_fraction: 0.9,
            max_vocab: 128,
            seed: 0,
        }
    }
}

/// Vocabulary layout and generation settings of one synthetic domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainManifest {
    pub name: String,
    /// Half-open id range of the domain's topic words.
    pub topic_ids: (usize, usize),
    pub cue_group: usize,
    pub style_group: usize,
    pub rumor_cue_ids: Vec<usize>,
    pub non_rumor_cue_ids: Vec<usize>,
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthStreamConfig,
    pub vocab_size: usize,
    pub shared_ids: (usize, usize),
    pub style_ids: [(usize, usize); 2],
    pub domains: Vec<DomainManifest>,
}

#[derive(Clone, Debug)]
pub struct SynthStream {
    pub vocab: Vocabulary,
    pub domains: Vec<DomainTask>,
    pub corpus: Vec<String>,
    pub manifest: SynthManifest,
}

/// Frame words: under the first, rumor cues go with rumor words; under the
/// second, with non-rumor words.
pub const FRAMES: [&str; 2] = ["frame0", "frame1"];

struct Words {
    shared: Vec<String>,
    /// `cues[group][label index]`
    cues: [[Vec<String>; 2]; 2],
    styles: [Vec<String>; 2],
    topics: Vec<Vec<String>>,
}

impl Words {
    fn new(c: &SynthStreamConfig) -> Self {
        let names = |prefix: String, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        let cue_group = |g: usize| [names(format!("cue{g}n"), c.cue_words), names(format!("cue{g}r"), c.cue_words)];
        Self {
            shared: names("s".into(), c.shared_words),
            cues: [cue_group(0), cue_group(1)],
            styles: [names("style0_".into(), c.style_words), names("style1_".into(), c.style_words)],
            topics: (0..c.n_tasks).map(|k| names(format!("topic{k}_"), c.topic_words)).collect(),
        }
    }

    fn in_order(&self) -> Vec<String> {
        let mut all: Vec<String> = FRAMES.iter().map(|s| s.to_string()).collect();
        all.extend(self.shared.iter().cloned());
        for g in &self.cues {
            all.extend(g[0].iter().chain(&g[1]).cloned());
        }
        for s in &self.styles {
            all.extend(s.iter().cloned());
        }
        for t in &self.topics {
            all.extend(t.iter().cloned());
        }
        all
    }
}

fn validate(c: &SynthStreamConfig) -> Result<()> {
    let bad = |m: &str| Err(Error::Data(format!("synthetic stream: {m}")));
    if c.n_tasks < 2 {
        return bad("need at least two tasks");
    }
    if c.cue_words == 0 || c.topic_words == 0 || c.style_words == 0 || c.shared_words == 0 {
        return bad("every word pool must be non-empty");
    }
    if !(0.0..=1.0).contains(&c.shared_fraction) || !(0.0..=1.0).contains(&c.framed_fraction) {
        return bad("fractions must lie in [0, 1]");
    }
    if c.claim_len < 1 + c.style_per_claim {
        return bad("claim too short for its cue and style words");
    }
    Ok(())
}

struct DomainPlan<'a> {
    words: &'a Words,
    config: &'a SynthStreamConfig,
    k: usize,
    cue_group: usize,
    style_group: usize,
    inverted: bool,
}

impl DomainPlan<'_> {
    fn filler(&self, rng: &mut ChaCha8Rng) -> String {
        let pool = if rng.random_bool(self.config.shared_fraction) {
            &self.words.shared
        } else {
            &self.words.topics[self.k]
        };
        pool.choose(rng).expect("non-empty pool").clone()
    }

    fn cue(&self, label: Label, i: usize) -> &str {
        let idx = if self.inverted { 1 - label.index() } else { label.index() };
        let set = &self.words.cues[self.cue_group][idx];
        &set[i % set.len()]
    }

    fn example(&self, label: Label, i: usize, rng: &mut ChaCha8Rng) -> RumorExample {
        let c = self.config;
        let mut claim: Vec<String> = (0..c.claim_len).map(|_| self.filler(rng)).collect();
        let mut slots: Vec<usize> = (0..c.claim_len).collect();
        slots.shuffle(rng);
        claim[slots[0]] = self.cue(label, i).to_string();
        for &s in &slots[1..=c.style_per_claim] {
            claim[s] = self.words.styles[self.style_group].choose(rng).expect("styles").clone();
        }
        let comments = (0..c.comments)
            .map(|_| {
                (0..c.comment_len)
                    .map(|_| {
                        if rng.random_bool(0.25) {
                            self.words.styles[self.style_group].choose(rng).expect("styles").clone()
                        } else {
                            self.filler(rng)
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        RumorExample {
            claim: claim.join(" "),
            comments,
            label,
            domain: format!("d{}", self.k + 1),
        }
    }
}

const SEP_WORD: &str = "[SEP]";

fn label_word(label: Label, rng: &mut ChaCha8Rng) -> String {
    let words: &[&str] = match label {
        Label::NonRumor => &NON_RUMOR_WORDS,
        Label::Rumor => &RUMOR_WORDS,
    };
    words.choose(rng).expect("label words").to_string()
}

/// Generate a labeled domain stream plus an unlabeled pretraining corpus.
///
/// Every claim carries exactly one cue word; the label is a function of the
/// cue under the configured rule. Cue words are used equally often per label.
pub fn synth_stream(config: &SynthStreamConfig) -> Result<SynthStream> {
    validate(config)?;
    let words = Words::new(config);
    let vocab = Vocabulary::new(words.in_order());
    if vocab.len() > config.max_vocab {
        return Err(Error::Data(format!(
            "synthetic stream needs {} vocabulary ids, only {} available",
            vocab.len(),
            config.max_vocab
        )));
    }
    let id = |w: &String| vocab.id(w).expect("word in vocabulary");
    let range = |ws: &[String]| (id(&ws[0]), id(&ws[ws.len() - 1]) + 1);

    let mut domains = Vec::with_capacity(config.n_tasks);
    let mut metas = Vec::with_capacity(config.n_tasks);
    for k in 0..config.n_tasks {
        let (cue_group, style_group) = match config.rule {
            LabelRule::Rotated => (k % 2, k % 2),
            _ => (0, k % 2),
        };
        let plan = DomainPlan {
            words: &words,
            config,
            k,
            cue_group,
            style_group,
            inverted: config.rule == LabelRule::Inverted && k % 2 == 1,
        };
        let domain_seed = seed::derive(config.seed, "domain", k as u64);
        let mut rng = seed::rng(domain_seed, "examples", 0);
        let examples: Vec<_> = (0..config.examples_per_domain)
            .map(|i| plan.example(Label::from_index(i % 2), i / 2, &mut rng))
            .collect();
        let name = format!("d{}", k + 1);
        let task = split(&name, &examples, domain_seed)?;
        let cue_ids = |label: Label| {
            (0..config.cue_words)
                .map(|i| vocab.id(plan.cue(label, i)).expect("cue in vocabulary"))
                .collect()
        };
        metas.push(DomainManifest {
            name,
            topic_ids: range(&words.topics[k]),
            cue_group,
            style_group,
            rumor_cue_ids: cue_ids(Label::Rumor),
            non_rumor_cue_ids: cue_ids(Label::NonRumor),
            seed: domain_seed,
            train: task.train.len(),
            validation: task.validation.len(),
            test: task.test.len(),
        });
        domains.push(task);
    }

    // Corpus sentences reuse the example generator. Plain sentences get a label
    // word at a random spot. Framed sentences follow the input layout with the
    // label word first and come in triples over the same text: one per frame
    // word, plus an unframed copy whose label word is a coin flip.
    let mut rng = seed::rng(config.seed, "corpus", 0);
    let mut corpus = Vec::with_capacity(config.corpus_size + 1);
    let mut i = 0;
    while corpus.len() < config.corpus_size {
        let k = rng.random_range(0..config.n_tasks);
        let label = Label::from_index(rng.random_range(0..2));
        let plan = DomainPlan {
            words: &words,
            config,
            k,
            cue_group: rng.random_range(0..2),
            style_group: rng.random_range(0..2),
            inverted: false,
        };
        let ex = plan.example(label, i, &mut rng);
        i += 1;
        let mut toks: Vec<String> = ex.claim.split(' ').map(String::from).collect();
        let comments = ex.comments.iter().flat_map(|c| c.split(' ').map(String::from));
        if rng.random_bool(config.framed_fraction) {
            toks.push(SEP_WORD.to_string());
            toks.extend(comments);
            for (frame, word) in FRAMES.iter().enumerate() {
                let mut t = toks.clone();
                let at = rng.random_range(0..=t.len());
                t.insert(at, word.to_string());
                t.insert(0, label_word(Label::from_index(label.index() ^ frame), &mut rng));
                corpus.push(t.join(" "));
            }
            let mut t = toks;
            t.insert(0, label_word(Label::from_index(rng.random_range(0..2)), &mut rng));
            corpus.push(t.join(" "));
        } else {
            toks.extend(comments);
            let at = rng.random_range(0..=toks.len());
            toks.insert(at, label_word(Label::from_index(rng.random_range(0..2)), &mut rng));
            corpus.push(toks.join(" "));
        }
    }
    corpus.truncate(config.corpus_size);

    let manifest = SynthManifest {
        config: config.clone(),
        vocab_size: vocab.len(),
        shared_ids: range(&words.shared),
        style_ids: [range(&words.styles[0]), range(&words.styles[1])],
        domains: metas,
    };
    Ok(SynthStream {
        vocab,
        domains,
        corpus,
        manifest,
    })
}
