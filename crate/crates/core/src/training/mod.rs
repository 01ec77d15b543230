//! Training recipes: task adapters, language adapters, fusion, full
//! fine-tuning, and the multi-source baselines, with seed replication and
//! best-on-dev checkpoint selection.

mod recipes;
mod rundir;
mod seeds;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use recipes::{
    build_fusion_stack, mean_ensemble_predict, train_baseline, train_fft, train_fusion, train_language_adapter,
    train_task_adapter, LaOutcome, RecipeContext, Scorer, TrainedModel,
};
pub use rundir::{timing_report, write_run_dir, write_timing_tsv, TimingRow};
pub use seeds::{mean_std, run_seeds, SeedRuns};

use crate::adapters::{param_group, LanguageAdapter, LanguageAdapterBank};
use crate::datakit::{Corpus, Tokenizer};
use crate::encoder::Classifier;
use crate::error::{Error, Result};
use crate::evalkit::{dev_metric, Metric};
use crate::numerics::{Adam, ParamSet, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub selection_metric: Metric,
    pub max_len: usize,
    /// Decision threshold on the check-worthy probability.
    pub threshold: f64,
    /// Adapter bottleneck width; `None` means `d_model / 8`.
    pub bottleneck: Option<usize>,
    /// Oversample languages to equal size in mixed streams.
    pub rebalance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::ct21()
    }
}

impl TrainConfig {
    /// Ranking-style preset: lr 1e-4, MAP selection.
    pub fn ct21() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-4,
            batch_size: 16,
            seeds: (0..10).collect(),
            selection_metric: Metric::Map,
            max_len: 128,
            threshold: 0.5,
            bottleneck: None,
            rebalance: false,
        }
    }

    /// Classification-style preset: lr 2e-5, F1 selection.
    pub fn ct22() -> Self {
        TrainConfig { lr: 2e-5, selection_metric: Metric::F1, ..Self::ct21() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        Ok(())
    }

    pub fn bottleneck_for(&self, d: usize) -> usize {
        self.bottleneck.unwrap_or((d / 8).max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "FFT-single")]
    FftSingle,
    #[serde(rename = "TA-single")]
    TaSingle,
    #[serde(rename = "TA+LA-single")]
    TaLaSingle,
    #[serde(rename = "WL+FFT")]
    WlFft,
    #[serde(rename = "WL+TA")]
    WlTa,
    #[serde(rename = "WL+TA+LA")]
    WlTaLa,
    #[serde(rename = "WL+AF")]
    WlAf,
    #[serde(rename = "WL+AF+LA")]
    WlAfLa,
    #[serde(rename = "Mean-ensemble")]
    MeanEnsemble,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::FftSingle,
        ModelKind::TaSingle,
        ModelKind::TaLaSingle,
        ModelKind::WlFft,
        ModelKind::WlTa,
        ModelKind::WlTaLa,
        ModelKind::WlAf,
        ModelKind::WlAfLa,
        ModelKind::MeanEnsemble,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::FftSingle => "FFT-single",
            ModelKind::TaSingle => "TA-single",
            ModelKind::TaLaSingle => "TA+LA-single",
            ModelKind::WlFft => "WL+FFT",
            ModelKind::WlTa => "WL+TA",
            ModelKind::WlTaLa => "WL+TA+LA",
            ModelKind::WlAf => "WL+AF",
            ModelKind::WlAfLa => "WL+AF+LA",
            ModelKind::MeanEnsemble => "Mean-ensemble",
        }
    }

    pub fn is_single(self) -> bool {
        matches!(self, ModelKind::FftSingle | ModelKind::TaSingle | ModelKind::TaLaSingle)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaPolicy {
    None,
    Stacked,
    FallbackDefault,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub sources: Vec<String>,
    pub la_policy: LaPolicy,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, sources: &[&str]) -> Self {
        let la_policy = match kind {
            ModelKind::TaLaSingle | ModelKind::WlTaLa | ModelKind::WlAfLa => LaPolicy::Stacked,
            _ => LaPolicy::None,
        };
        ModelSpec { kind, sources: sources.iter().map(|s| s.to_string()).collect(), la_policy }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sources.len();
        if self.kind.is_single() && n != 1 {
            return Err(Error::Config(format!("{} takes exactly one source language, got {n}", self.kind)));
        }
        if !self.kind.is_single() && n < 2 {
            return Err(Error::Config(format!("{} needs at least two source languages, got {n}", self.kind)));
        }
        let needs_la = matches!(self.kind, ModelKind::TaLaSingle | ModelKind::WlTaLa | ModelKind::WlAfLa);
        if needs_la && self.la_policy == LaPolicy::None {
            return Err(Error::Config(format!("{} requires a language adapter policy", self.kind)));
        }
        if matches!(self.kind, ModelKind::FftSingle | ModelKind::WlFft | ModelKind::TaSingle)
            && self.la_policy != LaPolicy::None
        {
            return Err(Error::Config(format!("{} has no adapter slot for a language adapter", self.kind)));
        }
        Ok(())
    }

    /// Short identifier such as `WL+AF+LA[en,ar,es]`.
    pub fn id(&self) -> String {
        format!("{}[{}]", self.kind, self.sources.join(","))
    }
}

/// A labeled corpus tokenized once for training and scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCorpus {
    pub name: String,
    pub ids: Vec<String>,
    pub langs: Vec<String>,
    pub tokens: Vec<Vec<usize>>,
    pub labels: Vec<u8>,
}

impl EncodedCorpus {
    pub fn new(tok: &Tokenizer, corpus: &Corpus) -> Result<Self> {
        let mut out = EncodedCorpus {
            name: corpus.name.clone(),
            ids: Vec::new(),
            langs: Vec::new(),
            tokens: Vec::new(),
            labels: Vec::new(),
        };
        for e in &corpus.examples {
            let label = e.label.ok_or_else(|| Error::Input(format!("example {} has no label", e.id)))?;
            out.ids.push(e.id.clone());
            out.langs.push(e.lang.clone());
            out.tokens.push(tok.encode(&e.text));
            out.labels.push(label);
        }
        Ok(out)
    }

    pub fn concat(name: &str, parts: &[&EncodedCorpus]) -> Self {
        let mut out = EncodedCorpus {
            name: name.to_string(),
            ids: Vec::new(),
            langs: Vec::new(),
            tokens: Vec::new(),
            labels: Vec::new(),
        };
        for p in parts {
            out.ids.extend(p.ids.iter().cloned());
            out.langs.extend(p.langs.iter().cloned());
            out.tokens.extend(p.tokens.iter().cloned());
            out.labels.extend(p.labels.iter().copied());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Distinct languages in first-appearance order.
    pub fn languages(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.langs {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        out
    }
}

/// Language adapter to use for each example.
#[derive(Clone, Copy, Debug)]
pub enum LaMode<'a> {
    /// Whatever the stack has installed (possibly nothing).
    Installed,
    /// The example's own language adapter, or the fallback language's.
    PerExample { bank: &'a LanguageAdapterBank, fallback: &'a str },
}

impl<'a> LaMode<'a> {
    fn resolve(&self, lang: &str) -> Result<Option<&'a LanguageAdapter>> {
        match *self {
            LaMode::Installed => Ok(None),
            LaMode::PerExample { bank, fallback } => Ok(Some(bank.resolve(lang, fallback)?.0)),
        }
    }
}

/// Check-worthy probabilities for every example of `data`.
pub fn score_encoded(model: &Classifier, data: &EncodedCorpus, la: LaMode) -> Result<Vec<f64>> {
    data.tokens
        .iter()
        .zip(&data.langs)
        .map(|(ids, lang)| {
            let mut tape = Tape::new();
            let (logits, _) = model.logits_on_tape(&mut tape, ids, la.resolve(lang)?)?;
            let p = crate::numerics::softmax(tape.value(logits), -1)?;
            Ok(p.data()[crate::encoder::CW_CLASS])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    /// Wall-clock seconds of the optimization pass (dev scoring excluded).
    pub seconds: f64,
}

/// SHA-256 of one parameter group and whether any of it was trainable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupHash {
    pub hash: String,
    pub trainable: bool,
}

pub fn group_hashes<P: ParamSet + ?Sized>(model: &P) -> BTreeMap<String, GroupHash> {
    let mut groups: BTreeMap<String, bool> = BTreeMap::new();
    model.visit(&mut |p| {
        *groups.entry(param_group(&p.name).to_string()).or_default() |= p.trainable;
    });
    groups
        .into_iter()
        .map(|(g, trainable)| {
            let hash = model.hash_where(&|n| param_group(n) == g);
            (g, GroupHash { hash, trainable })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub recipe: String,
    pub seed: u64,
    /// Parameters of the best-on-dev epoch.
    pub model: Classifier,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev: f64,
    pub hashes_before: BTreeMap<String, GroupHash>,
    pub hashes_after: BTreeMap<String, GroupHash>,
}

impl TrainOutcome {
    /// Groups that were entirely frozen during training.
    pub fn frozen_groups(&self) -> Vec<String> {
        self.hashes_before.iter().filter(|(_, h)| !h.trainable).map(|(g, _)| g.clone()).collect()
    }

    /// True when every frozen group hashes identically before and after.
    pub fn frozen_intact(&self) -> bool {
        self.frozen_groups().iter().all(|g| self.hashes_before[g].hash == self.hashes_after[g].hash)
    }
}

fn epoch_order(data: &EncodedCorpus, rebalance: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = if rebalance {
        let langs = data.languages();
        let groups: Vec<Vec<usize>> =
            langs.iter().map(|l| (0..data.len()).filter(|&i| &data.langs[i] == l).collect()).collect();
        let target = groups.iter().map(Vec::len).max().unwrap_or(0);
        groups.iter().flat_map(|g| (0..target).map(move |k| g[k % g.len()])).collect()
    } else {
        (0..data.len()).collect()
    };
    order.shuffle(rng);
    order
}

/// Minibatch Adam with per-epoch dev scoring; returns the best-on-dev
/// snapshot (earliest epoch on ties).
pub fn fit(
    mut model: Classifier,
    train: &EncodedCorpus,
    dev: &EncodedCorpus,
    cfg: &TrainConfig,
    seed: u64,
    la: LaMode,
    recipe: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input(format!("{recipe}: training corpus is empty")));
    }
    if dev.is_empty() {
        return Err(Error::Input(format!("{recipe}: development corpus is empty")));
    }
    let hashes_before = group_hashes(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546);
    let mut opt = Adam::new(cfg.lr);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Classifier)> = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(train, cfg.rebalance, &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let (logits, _) = model.logits_on_tape(&mut tape, &train.tokens[i], la.resolve(&train.langs[i])?)?;
                let loss = tape.cross_entropy(logits, &[train.labels[i] as usize])?;
                let v = tape.scalar(loss);
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("{recipe}: loss became {v} in epoch {epoch}")));
                }
                total += v;
                let loss = tape.scale(loss, scale);
                model.accumulate_grads(&tape.backward(loss)?);
            }
            opt.step(&mut model);
        }
        let seconds = start.elapsed().as_secs_f64();
        let scores = score_encoded(&model, dev, la)?;
        let metric = dev_metric(&scores, dev, cfg.selection_metric, cfg.threshold)?;
        epochs.push(EpochRecord { epoch, train_loss: total / order.len() as f64, dev_metric: metric, seconds });
        if best.as_ref().is_none_or(|b| metric > b.1) {
            best = Some((epoch, metric, model.clone()));
        }
    }
    let hashes_after = group_hashes(&model);
    let (best_epoch, best_dev, model) = best.expect("at least one epoch");
    let out = TrainOutcome {
        recipe: recipe.to_string(),
        seed,
        model,
        epochs,
        best_epoch,
        best_dev,
        hashes_before,
        hashes_after,
    };
    if !out.frozen_intact() {
        return Err(Error::Contract(format!("{recipe}: a frozen parameter group changed during training")));
    }
    Ok(out)
}
