//! Masked-language-model objective, shared by backbone pretraining and
//! language-adapter training.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{effective_len, Backbone, EncoderConfig};
use crate::adapters::{AdapterStack, LanguageAdapter};
use crate::datakit::{CLS_ID, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::{Adam, ParamSet, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmConfig {
    pub mask_prob: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig { mask_prob: 0.15, epochs: 5, lr: 3e-3, batch_size: 16, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MlmReport {
    /// Mean masked-token cross entropy over each epoch's stream.
    pub epoch_losses: Vec<f64>,
}

/// A sequence with some positions replaced by `[MASK]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Masks each ordinary token with probability `prob` (at least one per
/// sequence). Returns `None` when the sequence has no ordinary token.
pub fn mask_sequence(ids: &[usize], prob: f64, rng: &mut impl Rng) -> Option<MaskedSequence> {
    let ids = &ids[..effective_len(ids)];
    let candidates: Vec<usize> =
        (0..ids.len()).filter(|&i| ids[i] != PAD_ID && ids[i] != CLS_ID && ids[i] != MASK_ID).collect();
    if candidates.is_empty() {
        return None;
    }
    let mut positions: Vec<usize> = candidates.iter().copied().filter(|_| rng.gen_bool(prob)).collect();
    if positions.is_empty() {
        positions.push(*candidates.choose(rng).expect("non-empty"));
    }
    let mut masked = ids.to_vec();
    let targets = positions.iter().map(|&p| std::mem::replace(&mut masked[p], MASK_ID)).collect();
    Some(MaskedSequence { ids: masked, positions, targets })
}

/// Vocabulary logits `[positions × vocab]` at the masked positions.
pub fn mlm_logits_on_tape(
    backbone: &Backbone,
    stack: Option<&AdapterStack>,
    la: Option<&LanguageAdapter>,
    tape: &mut Tape,
    m: &MaskedSequence,
) -> Result<Var> {
    let tok = backbone.embed_tokens(tape, &m.ids)?;
    let fp = backbone.forward_from_embeddings(tape, tok, &m.ids, stack, la)?;
    let h = tape.select_rows(fp.hidden, &m.positions)?;
    let head = &backbone.mlm;
    let w = tape.param(&head.w);
    let b = tape.param(&head.b);
    let t = tape.matmul(h, w)?;
    let t = tape.add_row(t, b)?;
    let t = tape.relu(t);
    let g = tape.param(&head.ln_g);
    let bb = tape.param(&head.ln_b);
    let t = tape.layernorm(t, g, bb, backbone.config.ln_eps)?;
    let emb = tape.param(&backbone.tok_emb);
    let logits = tape.matmul_bt(t, emb)?;
    let ob = tape.param(&head.out_b);
    tape.add_row(logits, ob)
}

/// Mean cross entropy over the masked positions.
pub fn mlm_loss_on_tape(
    backbone: &Backbone,
    stack: Option<&AdapterStack>,
    la: Option<&LanguageAdapter>,
    tape: &mut Tape,
    m: &MaskedSequence,
) -> Result<Var> {
    let logits = mlm_logits_on_tape(backbone, stack, la, tape, m)?;
    tape.cross_entropy(logits, &m.targets)
}

/// Minibatch Adam on the masked-token objective. `loss` builds one
/// sequence's loss on a fresh tape.
pub(crate) fn run_mlm<M, F>(model: &mut M, corpus: &[Vec<usize>], cfg: &MlmConfig, loss: F) -> Result<MlmReport>
where
    M: ParamSet,
    F: Fn(&M, &mut Tape, &MaskedSequence) -> Result<Var>,
{
    if corpus.is_empty() {
        return Err(Error::Input("masked-language-model corpus is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::Config("epochs, batch_size and lr must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = MlmReport::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let masked: Vec<MaskedSequence> =
                batch.iter().filter_map(|&i| mask_sequence(&corpus[i], cfg.mask_prob, &mut rng)).collect();
            if masked.is_empty() {
                continue;
            }
            let scale = 1.0 / masked.len() as f64;
            for m in &masked {
                let mut tape = Tape::new();
                let l = loss(model, &mut tape, m)?;
                let v = tape.scalar(l);
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("masked-token loss became {v}")));
                }
                total += v;
                count += 1;
                let l = tape.scale(l, scale);
                let grads = tape.backward(l)?;
                model.accumulate_grads(&grads);
            }
            opt.step(model);
        }
        report.epoch_losses.push(total / count.max(1) as f64);
    }
    Ok(report)
}

/// Builds a fresh backbone from `config` and trains it with the masked-token
/// objective on `corpus` (token-id sequences, `[CLS]` first).
pub fn pretrain_backbone_mlm(
    config: &EncoderConfig,
    corpus: &[Vec<usize>],
    mlm: &MlmConfig,
) -> Result<(Backbone, MlmReport)> {
    if corpus.is_empty() {
        return Err(Error::Input("pretraining corpus is empty".into()));
    }
    let mut bb = Backbone::new(config.clone(), mlm.seed)?;
    let report = run_mlm(&mut bb, corpus, mlm, |b, tape, m| mlm_loss_on_tape(b, None, None, tape, m))?;
    Ok((bb, report))
}

/// Top-1 accuracy of masked-token prediction on `corpus`, masking with
/// `seed` so paired comparisons see identical masks.
pub fn masked_accuracy(
    backbone: &Backbone,
    stack: Option<&AdapterStack>,
    corpus: &[Vec<usize>],
    mask_prob: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hit = 0usize;
    let mut total = 0usize;
    for ids in corpus {
        let Some(m) = mask_sequence(ids, mask_prob, &mut rng) else { continue };
        let mut tape = Tape::new();
        let logits = mlm_logits_on_tape(backbone, stack, None, &mut tape, &m)?;
        let l = tape.value(logits);
        for (r, &t) in m.targets.iter().enumerate() {
            let row = l.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hit += (best == t) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Input("no maskable tokens in evaluation corpus".into()));
    }
    Ok(hit as f64 / total as f64)
}
