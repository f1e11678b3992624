use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Mat, Tape, Var};
use crate::container::{Container, DType, Kind, Tensor};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, FFN_MULT};

/// Parameters of one pre-norm transformer layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerT<T> {
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
    pub ff1_w: T,
    pub ff1_b: T,
    pub ff2_w: T,
    pub ff2_b: T,
}

/// Every tensor of the masked-LM backbone, generic over storage so the same
/// layout describes values (`Mat`), tape handles (`Var`) and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneT<T> {
    pub token_emb: T,
    pub pos_emb: T,
    pub layers: Vec<LayerT<T>>,
    pub lnf_gain: T,
    pub lnf_bias: T,
    /// MLM transform before the tied decoder.
    pub mlm_w: T,
    pub mlm_b: T,
    pub mlm_out_bias: T,
    pub cls_w: T,
    pub cls_b: T,
}

pub type Backbone = BackboneT<Mat>;
pub type BackboneVars = BackboneT<Var>;

impl<T> LayerT<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> LayerT<U> {
        let mut g = |name: &str, t: &'a T| f(&format!("{prefix}.{name}"), t);
        LayerT {
            ln1_gain: g("ln1_gain", &self.ln1_gain),
            ln1_bias: g("ln1_bias", &self.ln1_bias),
            wq: g("wq", &self.wq),
            bq: g("bq", &self.bq),
            wk: g("wk", &self.wk),
            bk: g("bk", &self.bk),
            wv: g("wv", &self.wv),
            bv: g("bv", &self.bv),
            wo: g("wo", &self.wo),
            bo: g("bo", &self.bo),
            ln2_gain: g("ln2_gain", &self.ln2_gain),
            ln2_bias: g("ln2_bias", &self.ln2_bias),
            ff1_w: g("ff1_w", &self.ff1_w),
            ff1_b: g("ff1_b", &self.ff1_b),
            ff2_w: g("ff2_w", &self.ff2_w),
            ff2_b: g("ff2_b", &self.ff2_b),
        }
    }

    fn fields_mut(&mut self) -> [&mut T; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
        ]
    }
}

impl<T> BackboneT<T> {
    /// Apply `f` to every tensor in canonical order, with its name.
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&str, &'a T) -> U) -> BackboneT<U> {
        BackboneT {
            token_emb: f("token_emb", &self.token_emb),
            pos_emb: f("pos_emb", &self.pos_emb),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("layer{i}"), &mut f))
                .collect(),
            lnf_gain: f("lnf_gain", &self.lnf_gain),
            lnf_bias: f("lnf_bias", &self.lnf_bias),
            mlm_w: f("mlm_w", &self.mlm_w),
            mlm_b: f("mlm_b", &self.mlm_b),
            mlm_out_bias: f("mlm_out_bias", &self.mlm_out_bias),
            cls_w: f("cls_w", &self.cls_w),
            cls_b: f("cls_b", &self.cls_b),
        }
    }

    /// Named tensors in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.map(|name, t| out.push((name.to_string(), t)));
        out
    }

    /// Mutable tensors in the same order as [`BackboneT::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = vec![&mut self.token_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend(l.fields_mut());
        }
        out.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.mlm_w,
            &mut self.mlm_b,
            &mut self.mlm_out_bias,
            &mut self.cls_w,
            &mut self.cls_b,
        ]);
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl Backbone {
    /// Seeded random initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let ffn = d * FFN_MULT;
        let lin = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize| {
            uniform(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
        };
        let layers = (0..config.layers)
            .map(|_| LayerT {
                ln1_gain: Mat::ones((1, d)),
                ln1_bias: Mat::zeros((1, d)),
                wq: lin(&mut rng, d, d),
                bq: Mat::zeros((1, d)),
                wk: lin(&mut rng, d, d),
                bk: Mat::zeros((1, d)),
                wv: lin(&mut rng, d, d),
                bv: Mat::zeros((1, d)),
                wo: lin(&mut rng, d, d),
                bo: Mat::zeros((1, d)),
                ln2_gain: Mat::ones((1, d)),
                ln2_bias: Mat::zeros((1, d)),
                ff1_w: lin(&mut rng, d, ffn),
                ff1_b: Mat::zeros((1, ffn)),
                ff2_w: lin(&mut rng, ffn, d),
                ff2_b: Mat::zeros((1, d)),
            })
            .collect();
        Self {
            token_emb: uniform(&mut rng, config.vocab_size, d, 1.0),
            pos_emb: uniform(&mut rng, config.max_seq, d, 0.5),
            layers,
            lnf_gain: Mat::ones((1, d)),
            lnf_bias: Mat::zeros((1, d)),
            mlm_w: lin(&mut rng, d, d),
            mlm_b: Mat::zeros((1, d)),
            mlm_out_bias: Mat::zeros((1, config.vocab_size)),
            cls_w: lin(&mut rng, d, 2),
            cls_b: Mat::zeros((1, 2)),
        }
    }

    /// Register every tensor on `tape`, as parameters when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BackboneVars {
        self.map(|_, m| tape.leaf(m.clone(), trainable))
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    /// SHA-256 over tensor names, shapes and little-endian `f64` values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.named() {
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Round every value to the nearest `f32`, making `f32` checkpoints lossless.
    pub fn round_to_f32(&mut self) {
        for m in self.tensors_mut() {
            m.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }

    /// Zero the MLM transform and output bias; the tied decoder then sees a
    /// zero vector and emits all-zero logits.
    pub fn zero_output_head(&mut self) {
        self.mlm_w.fill(0.0);
        self.mlm_b.fill(0.0);
        self.mlm_out_bias.fill(0.0);
    }

    /// Write an `f32` checkpoint. Values are rounded on the way out, so only a
    /// backbone that went through [`Backbone::round_to_f32`] reloads exactly.
    pub fn save(&self, path: &Path, config: &ModelConfig) -> Result<()> {
        let mut rounded = self.clone();
        rounded.round_to_f32();
        Container {
            kind: Kind::Backbone,
            config: config.clone(),
            meta: serde_json::json!({ "digest": rounded.digest() }),
            tensors: self
                .named()
                .into_iter()
                .map(|(n, m)| Tensor::from_mat(n, m, DType::F32))
                .collect(),
        }
        .write(path)
    }

    /// Load a checkpoint written for exactly `config`'s architecture.
    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind(Kind::Backbone)?;
        if !c.config.same_backbone(config) {
            return Err(Error::Config("checkpoint was saved for another architecture".into()));
        }
        let mut bb = Self::init(config, 0);
        let shapes = Self::expected_shapes(config);
        for (slot, (name, shape)) in bb.tensors_mut().into_iter().zip(shapes) {
            *slot = c.mat(&name, shape)?;
        }
        if let Some(d) = c.meta.get("digest").and_then(|v| v.as_str()) {
            if d != bb.digest() {
                return Err(Error::Container { offset: 0, msg: "checkpoint digest mismatch".into() });
            }
        }
        Ok(bb)
    }

    /// Expected tensor shapes for `config`, in canonical order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        Self::init(config, 0)
            .named()
            .into_iter()
            .map(|(n, m)| (n, m.dim()))
            .collect()
    }
}

/// Closed-form parameter count of [`Backbone`] for `config`.
pub fn backbone_param_count(config: &ModelConfig) -> usize {
    let d = config.hidden;
    let v = config.vocab_size;
    let ffn = d * FFN_MULT;
    let per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * ffn + ffn) + (ffn * d + d);
    v * d + config.max_seq * d + config.layers * per_layer + 2 * d + (d * d + d) + v + (d * 2 + 2)
}
