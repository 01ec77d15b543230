//! Small post-norm transformer encoder standing in for a pretrained
//! multilingual backbone, with one adapter slot per layer.

mod mlm;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub(crate) use mlm::run_mlm;
pub use mlm::{
    mask_sequence, masked_accuracy, mlm_logits_on_tape, mlm_loss_on_tape, pretrain_backbone_mlm, MaskedSequence,
    MlmConfig, MlmReport,
};

use crate::adapters::io as adapter_io;
use crate::adapters::{AdapterStack, FusionAttentionRecord, LanguageAdapter, TaskSlot};
use crate::checkpoint;
use crate::datakit::PAD_ID;
use crate::error::{Error, Result};
use crate::numerics::{softmax, uniform, ParamSet, Parameter, Tape, Tensor, Var};

/// Index of the check-worthy class in the classifier output.
pub const CW_CLASS: usize = 1;

/// Masked-out attention score; `exp` of it underflows to exactly zero.
const MASK_SCORE: f64 = -1e30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
}

fn default_max_len() -> usize {
    128
}
fn default_classes() -> usize {
    2
}
fn default_eps() -> f64 {
    1e-5
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ffn: 128,
            vocab_size: 2000,
            max_len: 128,
            n_classes: 2,
            ln_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        if self.max_len == 0 || self.n_layers == 0 || self.vocab_size < 5 || self.d_ffn == 0 {
            return Err(Error::Config("n_layers, max_len, d_ffn must be positive and vocab_size ≥ 5".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub w_q: Parameter,
    pub b_q: Parameter,
    pub w_k: Parameter,
    pub b_k: Parameter,
    pub w_v: Parameter,
    pub b_v: Parameter,
    pub w_o: Parameter,
    pub b_o: Parameter,
    pub ln1_g: Parameter,
    pub ln1_b: Parameter,
    pub ffn_w1: Parameter,
    pub ffn_b1: Parameter,
    pub ffn_w2: Parameter,
    pub ffn_b2: Parameter,
    pub ln2_g: Parameter,
    pub ln2_b: Parameter,
}

impl EncoderLayer {
    fn new(l: usize, c: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = c.d_model;
        let f = c.d_ffn;
        let p = |n: &str, t: Tensor| Parameter::new(format!("backbone.layer{l}.{n}"), t, true);
        let sd = (1.0 / d as f64).sqrt();
        let sf = (1.0 / f as f64).sqrt();
        EncoderLayer {
            w_q: p("attn.w_q", uniform(rng, &[d, d], sd)),
            b_q: p("attn.b_q", Tensor::zeros(&[d])),
            w_k: p("attn.w_k", uniform(rng, &[d, d], sd)),
            b_k: p("attn.b_k", Tensor::zeros(&[d])),
            w_v: p("attn.w_v", uniform(rng, &[d, d], sd)),
            b_v: p("attn.b_v", Tensor::zeros(&[d])),
            w_o: p("attn.w_o", uniform(rng, &[d, d], sd)),
            b_o: p("attn.b_o", Tensor::zeros(&[d])),
            ln1_g: p("ln1.g", Tensor::filled(&[d], 1.0)),
            ln1_b: p("ln1.b", Tensor::zeros(&[d])),
            ffn_w1: p("ffn.w1", uniform(rng, &[d, f], sd)),
            ffn_b1: p("ffn.b1", Tensor::zeros(&[f])),
            ffn_w2: p("ffn.w2", uniform(rng, &[f, d], sf)),
            ffn_b2: p("ffn.b2", Tensor::zeros(&[d])),
            ln2_g: p("ln2.g", Tensor::filled(&[d], 1.0)),
            ln2_b: p("ln2.b", Tensor::zeros(&[d])),
        }
    }

    fn params(&self) -> [&Parameter; 16] {
        [
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.b_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.ln1_g,
            &self.ln1_b,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.ln2_g,
            &self.ln2_b,
        ]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 16] {
        [
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }
}

/// Masked-token prediction head, tied to the token embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmHead {
    pub w: Parameter,
    pub b: Parameter,
    pub ln_g: Parameter,
    pub ln_b: Parameter,
    pub out_b: Parameter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub w: Parameter,
    pub b: Parameter,
}

impl ClassifierHead {
    pub fn new(d: usize, classes: usize, rng: &mut impl Rng) -> Self {
        ClassifierHead {
            w: Parameter::new("head.w", uniform(rng, &[d, classes], 0.02), true),
            b: Parameter::new("head.b", Tensor::zeros(&[classes]), true),
        }
    }
}

/// Embeddings, encoder layers, and the two heads, all as named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: EncoderConfig,
    pub tok_emb: Parameter,
    pub pos_emb: Parameter,
    pub emb_ln_g: Parameter,
    pub emb_ln_b: Parameter,
    pub layers: Vec<EncoderLayer>,
    pub mlm: MlmHead,
    pub head: ClassifierHead,
}

/// Values produced by one encoder pass on a tape.
pub struct ForwardPass {
    /// `[len × d_model]`
    pub hidden: Var,
    /// `(layer, [len × N] weights)` for every fusion slot.
    pub fusion: Vec<(usize, Var)>,
}

/// Number of positions before trailing padding (at least one).
pub fn effective_len(ids: &[usize]) -> usize {
    ids.iter().rposition(|&i| i != PAD_ID).map(|p| p + 1).unwrap_or(1).max(1)
}

impl Backbone {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let v = config.vocab_size;
        let layers = (0..config.n_layers).map(|l| EncoderLayer::new(l, &config, &mut rng)).collect();
        let sd = (1.0 / d as f64).sqrt();
        Ok(Backbone {
            tok_emb: Parameter::new("backbone.embed.tok", uniform(&mut rng, &[v, d], 0.5), true),
            pos_emb: Parameter::new("backbone.embed.pos", uniform(&mut rng, &[config.max_len, d], 0.1), true),
            emb_ln_g: Parameter::new("backbone.embed.ln.g", Tensor::filled(&[d], 1.0), true),
            emb_ln_b: Parameter::new("backbone.embed.ln.b", Tensor::zeros(&[d]), true),
            layers,
            mlm: MlmHead {
                w: Parameter::new("backbone.mlm.w", uniform(&mut rng, &[d, d], sd), true),
                b: Parameter::new("backbone.mlm.b", Tensor::zeros(&[d]), true),
                ln_g: Parameter::new("backbone.mlm.ln.g", Tensor::filled(&[d], 1.0), true),
                ln_b: Parameter::new("backbone.mlm.ln.b", Tensor::zeros(&[d]), true),
                out_b: Parameter::new("backbone.mlm.out_b", Tensor::zeros(&[v]), true),
            },
            head: ClassifierHead::new(d, config.n_classes, &mut rng),
            config,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Re-draws the classifier head from `seed`.
    pub fn reset_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
        let trainable = self.head.w.trainable;
        self.head = ClassifierHead::new(self.d_model(), self.config.n_classes, &mut rng);
        self.head.w.trainable = trainable;
        self.head.b.trainable = trainable;
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Contract(format!(
                "sequence of {} tokens exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Index(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Token embeddings `[len × d]` for `ids` (positions are added later).
    pub fn embed_tokens(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        self.check_ids(ids)?;
        tape.embed(&self.tok_emb, ids)
    }

    /// Encoder pass starting from token embeddings. `ids` supply the padding
    /// mask; `stack` (if any) runs after every feed-forward sub-layer.
    pub fn forward_from_embeddings(
        &self,
        tape: &mut Tape,
        tok: Var,
        ids: &[usize],
        stack: Option<&AdapterStack>,
        la_override: Option<&LanguageAdapter>,
    ) -> Result<ForwardPass> {
        let c = &self.config;
        let len = ids.len();
        if let Some(s) = stack {
            if s.n_layers() != c.n_layers {
                return Err(Error::Compatibility(format!(
                    "adapter stack has {} layers, backbone has {}",
                    s.n_layers(),
                    c.n_layers
                )));
            }
        }
        let positions: Vec<usize> = (0..len).collect();
        let pos = tape.embed(&self.pos_emb, &positions)?;
        let x = tape.add(tok, pos)?;
        let g = tape.param(&self.emb_ln_g);
        let b = tape.param(&self.emb_ln_b);
        let mut x = tape.layernorm(x, g, b, c.ln_eps)?;

        let mask: Option<Vec<f64>> = if ids.contains(&PAD_ID) {
            let row: Vec<f64> = ids.iter().map(|&i| if i == PAD_ID { MASK_SCORE } else { 0.0 }).collect();
            Some(row.repeat(len))
        } else {
            None
        };

        let mut fusion = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = self.attention(tape, layer, x, mask.as_deref())?;
            let r = tape.add(x, a)?;
            let g1 = tape.param(&layer.ln1_g);
            let b1 = tape.param(&layer.ln1_b);
            let a = tape.layernorm(r, g1, b1, c.ln_eps)?;

            let w1 = tape.param(&layer.ffn_w1);
            let bb1 = tape.param(&layer.ffn_b1);
            let w2 = tape.param(&layer.ffn_w2);
            let bb2 = tape.param(&layer.ffn_b2);
            let f = tape.matmul(a, w1)?;
            let f = tape.add_row(f, bb1)?;
            let f = tape.relu(f);
            let f = tape.matmul(f, w2)?;
            let mut f = tape.add_row(f, bb2)?;

            if let Some(s) = stack {
                let out = s.apply_layer(tape, l, f, la_override)?;
                f = out.hidden;
                if let Some(w) = out.fusion_weights {
                    fusion.push((l, w));
                }
            }

            let r = tape.add(a, f)?;
            let g2 = tape.param(&layer.ln2_g);
            let b2 = tape.param(&layer.ln2_b);
            x = tape.layernorm(r, g2, b2, c.ln_eps)?;
        }
        Ok(ForwardPass { hidden: x, fusion })
    }

    fn attention(&self, tape: &mut Tape, layer: &EncoderLayer, x: Var, mask: Option<&[f64]>) -> Result<Var> {
        let c = &self.config;
        let dh = c.d_model / c.n_heads;
        let proj = |tape: &mut Tape, w: &Parameter, b: &Parameter| -> Result<Var> {
            let wv = tape.param(w);
            let bv = tape.param(b);
            let y = tape.matmul(x, wv)?;
            tape.add_row(y, bv)
        };
        let q = proj(tape, &layer.w_q, &layer.b_q)?;
        let k = proj(tape, &layer.w_k, &layer.b_k)?;
        let v = proj(tape, &layer.w_v, &layer.b_v)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, s, e)?;
            let kh = tape.slice_cols(k, s, e)?;
            let vh = tape.slice_cols(v, s, e)?;
            let sc = tape.matmul_bt(qh, kh)?;
            let mut sc = tape.scale(sc, scale);
            if let Some(m) = mask {
                sc = tape.add_const(sc, m)?;
            }
            let p = tape.softmax_rows(sc);
            heads.push(tape.matmul(p, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        proj_out(tape, cat, &layer.w_o, &layer.b_o)
    }

    /// Classifier logits `[1 × n_classes]` from the first position.
    pub fn head_logits(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let pooled = tape.select_rows(hidden, &[0])?;
        proj_out(tape, pooled, &self.head.w, &self.head.b)
    }

    /// Per-layer attention probabilities `[len × len]` of head `h` (test aid).
    pub fn attention_probs(&self, ids: &[usize], layer: usize, head: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let tok = self.embed_tokens(&mut tape, ids)?;
        let c = &self.config;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.embed(&self.pos_emb, &positions)?;
        let x = tape.add(tok, pos)?;
        let g = tape.param(&self.emb_ln_g);
        let b = tape.param(&self.emb_ln_b);
        let mut x = tape.layernorm(x, g, b, c.ln_eps)?;
        let mask: Vec<f64> =
            ids.iter().map(|&i| if i == PAD_ID { MASK_SCORE } else { 0.0 }).collect::<Vec<_>>().repeat(ids.len());
        for (l, ly) in self.layers.iter().enumerate() {
            if l == layer {
                let dh = c.d_model / c.n_heads;
                let wq = tape.param(&ly.w_q);
                let bq = tape.param(&ly.b_q);
                let wk = tape.param(&ly.w_k);
                let bk = tape.param(&ly.b_k);
                let q = tape.matmul(x, wq)?;
                let q = tape.add_row(q, bq)?;
                let k = tape.matmul(x, wk)?;
                let k = tape.add_row(k, bk)?;
                let qh = tape.slice_cols(q, head * dh, (head + 1) * dh)?;
                let kh = tape.slice_cols(k, head * dh, (head + 1) * dh)?;
                let sc = tape.matmul_bt(qh, kh)?;
                let sc = tape.scale(sc, 1.0 / (dh as f64).sqrt());
                let sc = tape.add_const(sc, &mask)?;
                let p = tape.softmax_rows(sc);
                return Ok(tape.value(p).clone());
            }
            let a = self.attention(&mut tape, ly, x, Some(&mask))?;
            let r = tape.add(x, a)?;
            let g1 = tape.param(&ly.ln1_g);
            let b1 = tape.param(&ly.ln1_b);
            let a = tape.layernorm(r, g1, b1, c.ln_eps)?;
            let w1 = tape.param(&ly.ffn_w1);
            let bb1 = tape.param(&ly.ffn_b1);
            let w2 = tape.param(&ly.ffn_w2);
            let bb2 = tape.param(&ly.ffn_b2);
            let f = tape.matmul(a, w1)?;
            let f = tape.add_row(f, bb1)?;
            let f = tape.relu(f);
            let f = tape.matmul(f, w2)?;
            let f = tape.add_row(f, bb2)?;
            let r = tape.add(a, f)?;
            let g2 = tape.param(&ly.ln2_g);
            let b2 = tape.param(&ly.ln2_b);
            x = tape.layernorm(r, g2, b2, c.ln_eps)?;
        }
        Err(Error::Index(format!("layer {layer} of {}", self.layers.len())))
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let mut params = Vec::new();
        self.visit(&mut |p| params.push(p.clone()));
        let refs: Vec<&Parameter> = params.iter().collect();
        let meta = serde_json::json!({ "format": "backbone", "config": self.config });
        checkpoint::write(path, &meta, &refs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, mut params) = checkpoint::read(path)?;
        if meta["format"] != "backbone" {
            return Err(Error::Format(format!("{} is not a backbone checkpoint", path.display())));
        }
        let config: EncoderConfig = serde_json::from_value(meta["config"].clone())?;
        let mut bb = Backbone::new(config, 0)?;
        let mut missing = None;
        bb.visit_mut(&mut |p| match checkpoint::take(&mut params, &p.name) {
            Ok(q) => *p = q,
            Err(e) => missing = Some(e),
        });
        if let Some(e) = missing {
            return Err(e);
        }
        Ok(bb)
    }
}

fn proj_out(tape: &mut Tape, x: Var, w: &Parameter, b: &Parameter) -> Result<Var> {
    let wv = tape.param(w);
    let bv = tape.param(b);
    let y = tape.matmul(x, wv)?;
    tape.add_row(y, bv)
}

impl ParamSet for Backbone {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in [&self.tok_emb, &self.pos_emb, &self.emb_ln_g, &self.emb_ln_b] {
            f(p);
        }
        for l in &self.layers {
            l.params().into_iter().for_each(&mut *f);
        }
        for p in [&self.mlm.w, &self.mlm.b, &self.mlm.ln_g, &self.mlm.ln_b, &self.mlm.out_b, &self.head.w, &self.head.b]
        {
            f(p);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in [&mut self.tok_emb, &mut self.pos_emb, &mut self.emb_ln_g, &mut self.emb_ln_b] {
            f(p);
        }
        for l in &mut self.layers {
            l.params_mut().into_iter().for_each(&mut *f);
        }
        for p in [
            &mut self.mlm.w,
            &mut self.mlm.b,
            &mut self.mlm.ln_g,
            &mut self.mlm.ln_b,
            &mut self.mlm.out_b,
            &mut self.head.w,
            &mut self.head.b,
        ] {
            f(p);
        }
    }
}

/// Toggles trainability of the trunk (everything except the classifier
/// head); `include_head` applies the same setting to the head.
pub fn set_frozen(backbone: &mut Backbone, frozen: bool, include_head: bool) {
    backbone.visit_mut(&mut |p| {
        if p.name.starts_with("head.") {
            if include_head {
                p.trainable = !frozen;
            }
        } else {
            p.trainable = !frozen;
        }
    });
}

/// Hidden states `[len × d_model]` for a padded or unpadded id sequence.
/// Padding positions are excluded as attention keys.
pub fn encode(backbone: &Backbone, ids: &[usize], stack: Option<&AdapterStack>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let tok = backbone.embed_tokens(&mut tape, ids)?;
    let fp = backbone.forward_from_embeddings(&mut tape, tok, ids, stack, None)?;
    Ok(tape.value(fp.hidden).clone())
}

/// Logits from first-position pooling and the check-worthy probability.
pub fn classify(backbone: &Backbone, hidden: &Tensor) -> Result<(Tensor, f64)> {
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let logits = backbone.head_logits(&mut tape, h)?;
    let l = tape.value(logits).clone();
    let p = softmax(&l, -1)?;
    Ok((l, p.data()[CW_CLASS]))
}

/// A backbone with its (possibly empty) adapter stack: the unit that is
/// trained, scored and saved.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub backbone: Backbone,
    pub stack: Option<AdapterStack>,
}

/// Score plus fusion weights of one example.
#[derive(Clone, Debug)]
pub struct ScoredExample {
    pub logits: Vec<f64>,
    pub score: f64,
    pub fusion: Vec<FusionAttentionRecord>,
}

impl Classifier {
    pub fn new(backbone: Backbone, stack: Option<AdapterStack>) -> Result<Self> {
        if let Some(s) = &stack {
            check_stack(&backbone, s)?;
        }
        Ok(Classifier { backbone, stack })
    }

    /// Logits `[1 × C]` on `tape`, computing only the positions before
    /// trailing padding (padding is masked as attention keys, so the first
    /// position's state is unaffected).
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        la: Option<&LanguageAdapter>,
    ) -> Result<(Var, ForwardPass)> {
        let ids = &ids[..effective_len(ids)];
        let tok = self.backbone.embed_tokens(tape, ids)?;
        let fp = self.backbone.forward_from_embeddings(tape, tok, ids, self.stack.as_ref(), la)?;
        let logits = self.backbone.head_logits(tape, fp.hidden)?;
        Ok((logits, fp))
    }

    pub fn score(&self, ids: &[usize]) -> Result<f64> {
        Ok(self.score_detailed(ids)?.score)
    }

    pub fn score_detailed(&self, ids: &[usize]) -> Result<ScoredExample> {
        let mut tape = Tape::new();
        let (logits, fp) = self.logits_on_tape(&mut tape, ids, None)?;
        let l = tape.value(logits).clone();
        let p = softmax(&l, -1)?;
        let fusion = fp
            .fusion
            .iter()
            .map(|&(layer, w)| {
                let tags = match self.stack.as_ref().map(|s| &s.layers[layer].task) {
                    Some(TaskSlot::Fusion(f)) => f.tags(),
                    _ => Vec::new(),
                };
                FusionAttentionRecord::from_tensor(layer, tags, tape.value(w))
            })
            .collect();
        Ok(ScoredExample { logits: l.into_data(), score: p.data()[CW_CLASS], fusion })
    }
}

impl Classifier {
    /// Writes the trainable part of the model: the adapter stack plus the
    /// classifier head, or a full checkpoint when there is no stack.
    pub fn save(&self, path: &Path, tag: &str) -> Result<u64> {
        match &self.stack {
            Some(s) => adapter_io::save_adapters(path, s, tag, &[&self.backbone.head.w, &self.backbone.head.b]),
            None => self.backbone.save(path),
        }
    }

    /// Reverses [`Classifier::save`]: adapter files are attached to a copy of
    /// `backbone`; full checkpoints replace it.
    pub fn load(backbone: &Backbone, path: &Path) -> Result<Self> {
        let (meta, _) = checkpoint::read(path)?;
        if meta["format"] == "backbone" {
            return Classifier::new(Backbone::load(path)?, None);
        }
        let mut file = adapter_io::load_adapters(path)?;
        if file.header.d != backbone.d_model() {
            return Err(Error::Compatibility(format!(
                "adapter width mismatch: expected d={}, found d={}",
                backbone.d_model(),
                file.header.d
            )));
        }
        let mut bb = backbone.clone();
        if let (Ok(w), Ok(b)) =
            (checkpoint::take(&mut file.extra, "head.w"), checkpoint::take(&mut file.extra, "head.b"))
        {
            if w.value.shape() != bb.head.w.value.shape() {
                return Err(Error::Compatibility(format!(
                    "head shape {:?} does not match backbone {:?}",
                    w.value.shape(),
                    bb.head.w.value.shape()
                )));
            }
            bb.head.w = w;
            bb.head.b = b;
        }
        Classifier::new(bb, Some(file.stack))
    }
}

pub(crate) fn check_stack(backbone: &Backbone, s: &AdapterStack) -> Result<()> {
    if s.n_layers() != backbone.config.n_layers {
        return Err(Error::Compatibility(format!(
            "adapter stack has {} layers, backbone has {}",
            s.n_layers(),
            backbone.config.n_layers
        )));
    }
    let mut bad = None;
    s.visit(&mut |p| {
        if p.name.ends_with(".w_down") && p.value.shape()[0] != backbone.d_model() {
            bad = Some(p.value.shape()[0]);
        }
    });
    if let Some(found) = bad {
        return Err(Error::Compatibility(format!(
            "adapter width mismatch: expected d={}, found d={found}",
            backbone.d_model()
        )));
    }
    Ok(())
}

impl ParamSet for Classifier {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.backbone.visit(f);
        if let Some(s) = &self.stack {
            s.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.backbone.visit_mut(f);
        if let Some(s) = &mut self.stack {
            s.visit_mut(f);
        }
    }
}
