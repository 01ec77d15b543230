//! End-to-end synthetic suite: generation, backbone and language-adapter
//! pretraining, per-seed adapter training, zero-shot evaluation, fusion
//! weights, kappa, and the topical split.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterStack, BottleneckAdapter, LanguageAdapterBank};
use crate::datakit::{synth_generate, Corpus, SynthConfig, SynthOutput, Tokenizer};
use crate::encoder::{masked_accuracy, pretrain_backbone_mlm, Backbone, EncoderConfig, MlmConfig};
use crate::error::{Error, Result};
use crate::evalkit::{
    evaluate_model, fusion_attention_report, kappa_report, majority_baseline_f1, FusionReport, KappaReport, Metric,
    Scope,
};
use crate::topics::{
    build_relation_graph, run_topical, LocalRefit, RelationGraph, TauRule, TokenSet, TopicAssignment, TopicModel,
    TopicalRun, TopicalSplit,
};
use crate::training::{
    mean_std, train_fusion, train_language_adapter, train_task_adapter, EncodedCorpus, LaMode, ModelKind, ModelSpec,
    TrainConfig, TrainOutcome, TrainedModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsConfig {
    pub k: usize,
    pub tau: TauRule,
    pub refit: LocalRefit,
    pub seed: u64,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig {
            k: 8,
            tau: TauRule::default(),
            refit: LocalRefit { k: 8, tau: TauRule::Fixed(f64::INFINITY), min_support: 1, seed: 0 },
            seed: 0,
        }
    }
}

impl TopicsConfig {
    /// Settings the synthetic suite runs with: a looser outlier threshold and
    /// a finer refit that ignores single stray samples.
    pub fn suite() -> Self {
        TopicsConfig {
            tau: TauRule::Percentile(99.0),
            refit: LocalRefit { k: 24, tau: TauRule::Fixed(f64::INFINITY), min_support: 2, seed: 0 },
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub synth: SynthConfig,
    /// `vocab_size` is replaced by the tokenizer's size.
    pub encoder: EncoderConfig,
    pub backbone_mlm: MlmConfig,
    pub la_mlm: MlmConfig,
    /// Languages that get their own language adapter.
    pub la_languages: Vec<String>,
    /// Stand-in adapter for every other language.
    pub fallback: String,
    pub train: TrainConfig,
    pub topics: TopicsConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            synth: SynthConfig { surface_per_example: 2, ..Default::default() },
            encoder: EncoderConfig {
                n_layers: 2,
                d_model: 32,
                n_heads: 4,
                d_ffn: 64,
                max_len: 24,
                ..Default::default()
            },
            backbone_mlm: MlmConfig { epochs: 4, lr: 3e-3, ..Default::default() },
            la_mlm: MlmConfig { epochs: 4, lr: 3e-3, seed: 1, ..Default::default() },
            la_languages: ["en", "ar", "es", "tr", "bg", "nl"].map(String::from).to_vec(),
            fallback: "en".into(),
            train: TrainConfig {
                epochs: 20,
                lr: 5e-3,
                batch_size: 16,
                seeds: (0..5).collect(),
                selection_metric: Metric::F1,
                max_len: 24,
                threshold: 0.5,
                bottleneck: Some(8),
                rebalance: false,
            },
            topics: TopicsConfig::suite(),
        }
    }
}

/// Shared inputs of every seed.
#[derive(Clone, Debug)]
pub struct SuiteData {
    pub config: SuiteConfig,
    pub synth: SynthOutput,
    pub tokenizer: Tokenizer,
    pub backbone: Backbone,
    pub la_bank: LanguageAdapterBank,
    /// Masked-token accuracy per language: `(backbone alone, with its adapter)`.
    pub la_accuracy: BTreeMap<String, (f64, f64)>,
    pub train: BTreeMap<String, EncodedCorpus>,
    pub dev: BTreeMap<String, EncodedCorpus>,
    pub test: BTreeMap<String, EncodedCorpus>,
    pub unlabeled: BTreeMap<String, Vec<Vec<usize>>>,
}

fn encode_texts(tok: &Tokenizer, texts: &[String]) -> Vec<Vec<usize>> {
    texts.iter().map(|t| tok.encode(t)).collect()
}

/// Generates the data, builds the vocabulary, pretrains the backbone on
/// unlabeled text of every language and trains the language adapters.
pub fn prepare(config: &SuiteConfig) -> Result<SuiteData> {
    let synth = synth_generate(&config.synth)?;
    let mut texts: Vec<&str> = Vec::new();
    for l in synth.languages.values() {
        texts.extend(l.unlabeled.iter().map(String::as_str));
        for c in [l.train.as_ref(), l.dev.as_ref()].into_iter().flatten() {
            texts.extend(c.examples.iter().map(|e| e.text.as_str()));
        }
    }
    let tokenizer = Tokenizer::build(texts, config.encoder.max_len);
    let enc_cfg = EncoderConfig { vocab_size: tokenizer.vocab_size(), ..config.encoder.clone() };
    let unlabeled: BTreeMap<String, Vec<Vec<usize>>> =
        synth.languages.iter().map(|(l, d)| (l.clone(), encode_texts(&tokenizer, &d.unlabeled))).collect();
    let all: Vec<Vec<usize>> = unlabeled.values().flatten().cloned().collect();
    let (backbone, _) = pretrain_backbone_mlm(&enc_cfg, &all, &config.backbone_mlm)?;

    let bottleneck = config.train.bottleneck_for(enc_cfg.d_model);
    let outcomes = config
        .la_languages
        .par_iter()
        .map(|l| {
            let corpus = unlabeled.get(l).ok_or_else(|| Error::Config(format!("no unlabeled text for {l}")))?;
            let o = train_language_adapter(&backbone, l, corpus, &config.la_mlm, bottleneck)?;
            let mut stack = AdapterStack::empty(enc_cfg.n_layers);
            stack.install_language(&o.adapter)?;
            let seed = config.la_mlm.seed ^ 0xacc;
            let base = masked_accuracy(&backbone, None, corpus, config.la_mlm.mask_prob, seed)?;
            let with = masked_accuracy(&backbone, Some(&stack), corpus, config.la_mlm.mask_prob, seed)?;
            Ok((l.clone(), o.adapter, (base, with)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut la_bank = LanguageAdapterBank::default();
    let mut la_accuracy = BTreeMap::new();
    for (l, a, acc) in outcomes {
        la_bank.insert(a);
        la_accuracy.insert(l, acc);
    }
    if la_bank.get(&config.fallback).is_none() {
        return Err(Error::Config(format!("fallback language {} has no adapter", config.fallback)));
    }

    let enc = |c: &Corpus| EncodedCorpus::new(&tokenizer, c);
    let mut train = BTreeMap::new();
    let mut dev = BTreeMap::new();
    let mut test = BTreeMap::new();
    for (l, d) in &synth.languages {
        if let (Some(tr), Some(dv)) = (&d.train, &d.dev) {
            train.insert(l.clone(), enc(tr)?);
            dev.insert(l.clone(), enc(dv)?);
        }
        test.insert(l.clone(), enc(&d.test)?);
    }
    Ok(SuiteData {
        config: config.clone(),
        synth,
        tokenizer,
        backbone,
        la_bank,
        la_accuracy,
        train,
        dev,
        test,
        unlabeled,
    })
}

/// Zero-shot F1 of every model plus fusion weights and kappa for one seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Model label → language → F1.
    pub f1: BTreeMap<String, BTreeMap<String, f64>>,
    /// Fusion model label → mean fusion weights on the zero-shot test sets.
    pub fusion: BTreeMap<String, FusionReport>,
    pub kappa: KappaReport,
    /// Recipe → whether every frozen group hashed identically.
    pub frozen_intact: BTreeMap<String, bool>,
    /// Recipe → best development score.
    pub best_dev: BTreeMap<String, f64>,
    pub seconds: f64,
}

fn adapter_set(o: &TrainOutcome) -> Vec<BottleneckAdapter> {
    o.model.stack.as_ref().and_then(AdapterStack::task_adapter_set).expect("task adapter stack")
}

/// Trains single-source TA+LA models, WL+AF and WL+AF+LA with `seed`.
pub fn run_seed(data: &SuiteData, seed: u64) -> Result<SeedResult> {
    let start = Instant::now();
    let cfg = &data.config.train;
    let sources = data.synth.source_languages().to_vec();
    let zero_shot = data.synth.zero_shot_languages().to_vec();
    let bb = &data.backbone;
    let src_refs: Vec<&str> = sources.iter().map(String::as_str).collect();
    let dev_all = EncodedCorpus::concat("dev", &sources.iter().map(|l| &data.dev[l]).collect::<Vec<_>>());
    let train_all = EncodedCorpus::concat("train", &sources.iter().map(|l| &data.train[l]).collect::<Vec<_>>());
    let la_mode = LaMode::PerExample { bank: &data.la_bank, fallback: &data.config.fallback };

    let mut frozen_intact = BTreeMap::new();
    let mut best_dev = BTreeMap::new();
    let mut plain = Vec::new();
    let mut with_la = Vec::new();
    for l in &sources {
        let (tr, dv) = (&data.train[l], &data.dev[l]);
        let a = train_task_adapter(bb, l, tr, dv, cfg, seed, None, LaMode::Installed)?;
        let la = data.la_bank.resolve(l, &data.config.fallback)?.0;
        let b = train_task_adapter(bb, l, tr, dv, cfg, seed, Some(la), LaMode::Installed)?;
        for o in [&a, &b] {
            frozen_intact.insert(o.recipe.clone(), o.frozen_intact());
            best_dev.insert(o.recipe.clone(), o.best_dev);
        }
        plain.push(a);
        with_la.push(b);
    }
    let af = train_fusion(
        bb,
        &plain.iter().map(adapter_set).collect::<Vec<_>>(),
        &train_all,
        &dev_all,
        cfg,
        seed,
        LaMode::Installed,
    )?;
    let af_la = train_fusion(
        bb,
        &with_la.iter().map(adapter_set).collect::<Vec<_>>(),
        &train_all,
        &dev_all,
        cfg,
        seed,
        la_mode,
    )?;
    for o in [&af, &af_la] {
        frozen_intact.insert(o.recipe.clone(), o.frozen_intact());
        best_dev.insert(o.recipe.clone(), o.best_dev);
    }

    let wrap = |kind: ModelKind, srcs: &[&str], o: &TrainOutcome, la: bool| TrainedModel {
        spec: ModelSpec::new(kind, srcs),
        members: vec![o.model.clone()],
        la_bank: la.then(|| data.la_bank.clone()),
        fallback: data.config.fallback.clone(),
        outcomes: Vec::new(),
    };
    let mut models: Vec<(String, TrainedModel)> = Vec::new();
    for (l, o) in sources.iter().zip(&with_la) {
        models.push((format!("TA+LA-single[{l}]"), wrap(ModelKind::TaLaSingle, &[l.as_str()], o, true)));
    }
    let wl_af = wrap(ModelKind::WlAf, &src_refs, &af, false);
    let wl_af_la = wrap(ModelKind::WlAfLa, &src_refs, &af_la, true);
    models.push(("WL+AF".into(), wl_af.clone()));
    models.push(("WL+AF+LA".into(), wl_af_la.clone()));

    let corpora: Vec<(String, Option<&EncodedCorpus>)> =
        zero_shot.iter().map(|l| (l.clone(), data.test.get(l))).collect();
    let mut f1 = BTreeMap::new();
    let mut preds: BTreeMap<String, BTreeMap<String, Vec<u8>>> = BTreeMap::new();
    for (label, m) in &models {
        let (report, scored) = evaluate_model(m, &corpora, Scope::ZeroShot, Metric::F1, cfg.threshold)?;
        let per: BTreeMap<String, f64> =
            zero_shot.iter().map(|l| (l.clone(), report.value(l, "f1").unwrap_or(f64::NAN))).collect();
        f1.insert(label.clone(), per);
        let p = zero_shot.iter().filter_map(|l| scored.preds(l, cfg.threshold).map(|v| (l.clone(), v))).collect();
        preds.insert(label.clone(), p);
    }
    let fusion_data: Vec<(String, &EncodedCorpus)> = zero_shot.iter().map(|l| (l.clone(), &data.test[l])).collect();
    let mut fusion = BTreeMap::new();
    fusion.insert("WL+AF".to_string(), fusion_attention_report(&wl_af, &fusion_data)?);
    fusion.insert("WL+AF+LA".to_string(), fusion_attention_report(&wl_af_la, &fusion_data)?);
    let kappa = kappa_report(&preds["WL+AF"], &preds["WL+AF+LA"])?;
    Ok(SeedResult { seed, f1, fusion, kappa, frozen_intact, best_dev, seconds: start.elapsed().as_secs_f64() })
}

/// Number of planted topics each source's training set shares with a
/// language's test set.
pub fn planted_shared_topics(synth: &SynthOutput, lang: &str) -> BTreeMap<String, usize> {
    synth
        .source_languages()
        .iter()
        .map(|s| {
            let n = synth
                .topics
                .iter()
                .filter(|t| t.train_languages.contains(s) && t.test_languages.iter().any(|l| l == lang))
                .count();
            (s.clone(), n)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopicalResult {
    pub model: TopicModel,
    pub split: TopicalSplit,
    pub graph: RelationGraph,
    pub planted_graph: RelationGraph,
    pub global_precision: f64,
    pub global_recall: f64,
    pub local_precision: f64,
    pub local_recall: f64,
    /// Test-set accuracy of topic recovery against the generator's gold map,
    /// over examples of topics the model was fitted on (majority mapping).
    pub assignment_accuracy: f64,
    /// Largest |graph − planted| over all dataset pairs.
    pub max_graph_error: f64,
    /// Share of sampled (anchor, same-topic, other-topic) triples where the
    /// same-topic pair is closer.
    pub triple_accuracy: f64,
}

fn pr(found: &BTreeSet<&str>, gold: &BTreeSet<&str>) -> (f64, f64) {
    let tp = found.intersection(gold).count() as f64;
    let p = if found.is_empty() { 0.0 } else { tp / found.len() as f64 };
    let r = if gold.is_empty() { 0.0 } else { tp / gold.len() as f64 };
    (p, r)
}

fn token_set(c: &EncodedCorpus) -> TokenSet<'_> {
    (&c.ids, &c.tokens)
}

/// Topic model on the world-language training sets, topical split of the
/// test sets, relation graph, and their agreement with the planted topics.
pub fn run_topics(data: &SuiteData) -> Result<TopicalResult> {
    let tc = &data.config.topics;
    let sources = data.synth.source_languages().to_vec();
    let train: BTreeMap<String, TokenSet> = sources.iter().map(|l| (l.clone(), token_set(&data.train[l]))).collect();
    let test: BTreeMap<String, TokenSet> = data.test.iter().map(|(l, c)| (l.clone(), token_set(c))).collect();
    let run = run_topical(&data.backbone, &train, &test, tc.k, tc.tau, &tc.refit, tc.seed)?;
    let TopicalRun { model, train: train_assign, test: test_assign, split, graph } = run;

    let gold = &data.synth.gold;
    let scope_of = |id: &str| data.synth.topic(&gold[id]).map(|t| t.scope.clone());
    let test_ids: Vec<&str> = data.test.values().flat_map(|c| c.ids.iter().map(String::as_str)).collect();
    let gold_global: BTreeSet<&str> = test_ids
        .iter()
        .copied()
        .filter(|id| matches!(scope_of(id), Some(crate::datakit::TopicScope::Global)))
        .collect();
    let gold_local: BTreeSet<&str> = test_ids
        .iter()
        .copied()
        .filter(|id| matches!(scope_of(id), Some(crate::datakit::TopicScope::Local { .. })))
        .collect();
    let (global_precision, global_recall) = pr(&split.global_ids(), &gold_global);
    let (local_precision, local_recall) = pr(&split.local_ids(), &gold_local);

    // majority gold topic per fitted topic, from the training assignments
    let mut votes: BTreeMap<i64, BTreeMap<&str, usize>> = BTreeMap::new();
    for a in train_assign.values().flatten() {
        *votes.entry(a.topic).or_default().entry(gold[&a.id].as_str()).or_insert(0) += 1;
    }
    let label: BTreeMap<i64, &str> =
        votes.iter().map(|(t, v)| (*t, v.iter().max_by_key(|(_, c)| **c).map(|(g, _)| *g).unwrap_or(""))).collect();
    let fitted: BTreeSet<&str> =
        data.synth.topics.iter().filter(|t| !t.train_languages.is_empty()).map(|t| t.name.as_str()).collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for (a, _) in test_assign.values() {
        for x in a.iter().filter(|x| fitted.contains(gold[&x.id].as_str())) {
            total += 1;
            hit += (x.topic != crate::topics::OUTLIER && label.get(&x.topic) == Some(&gold[&x.id].as_str())) as usize;
        }
    }
    let assignment_accuracy = hit as f64 / total.max(1) as f64;

    let mut gold_sets: Vec<(String, Vec<Option<String>>)> = Vec::new();
    let fitted_only = |id: &str| Some(gold[id].clone()).filter(|g| fitted.contains(g.as_str()));
    for l in &sources {
        gold_sets.push((format!("{l}.train"), data.train[l].ids.iter().map(|id| fitted_only(id)).collect()));
    }
    for l in test_assign.keys() {
        gold_sets.push((format!("{l}.test"), data.test[l].ids.iter().map(|id| fitted_only(id)).collect()));
    }
    let planted_graph = build_relation_graph(&gold_sets);
    let mut max_graph_error: f64 = 0.0;
    for (i, (a, _)) in gold_sets.iter().enumerate() {
        for (b, _) in &gold_sets[i + 1..] {
            max_graph_error = max_graph_error.max((graph.weight(a, b) - planted_graph.weight(a, b)).abs());
        }
    }
    let triple_accuracy = triple_check(&test_assign, gold, 2000, tc.seed)?;
    Ok(TopicalResult {
        model,
        split,
        graph,
        planted_graph,
        global_precision,
        global_recall,
        local_precision,
        local_recall,
        assignment_accuracy,
        max_graph_error,
        triple_accuracy,
    })
}

fn triple_check(
    test: &BTreeMap<String, (Vec<TopicAssignment>, crate::numerics::Tensor)>,
    gold: &BTreeMap<String, String>,
    n: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rows: Vec<(&str, &[f64])> = Vec::new();
    for (a, e) in test.values() {
        for (i, x) in a.iter().enumerate() {
            rows.push((gold[&x.id].as_str(), e.row(i)));
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7269);
    let (mut ok, mut done) = (0usize, 0usize);
    let mut guard = 0;
    while done < n && guard < n * 100 {
        guard += 1;
        let (i, j, k) = (rng.gen_range(0..rows.len()), rng.gen_range(0..rows.len()), rng.gen_range(0..rows.len()));
        if i == j || rows[i].0 != rows[j].0 || rows[i].0 == rows[k].0 {
            continue;
        }
        done += 1;
        ok += (dot(rows[i].1, rows[j].1) > dot(rows[i].1, rows[k].1)) as usize;
    }
    Ok(ok as f64 / done.max(1) as f64)
}

/// Everything the acceptance criteria read from a suite run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seeds: Vec<SeedResult>,
    pub la_accuracy: BTreeMap<String, (f64, f64)>,
    /// Model label → language → (mean, std) F1 over seeds.
    pub f1_summary: BTreeMap<String, BTreeMap<String, (f64, f64)>>,
    pub majority_f1: BTreeMap<String, f64>,
    /// WL+AF+LA fusion weights averaged over seeds: zero-shot language →
    /// adapter → weight, over all tokens and at the pooled position.
    pub fusion_token: BTreeMap<String, BTreeMap<String, f64>>,
    pub fusion_pooled: BTreeMap<String, BTreeMap<String, f64>>,
    pub planted_shared: BTreeMap<String, BTreeMap<String, usize>>,
    pub topics: TopicalResult,
    pub seconds: f64,
}

pub fn summarize_f1(seeds: &[SeedResult]) -> BTreeMap<String, BTreeMap<String, (f64, f64)>> {
    let mut out: BTreeMap<String, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    if let Some(first) = seeds.first() {
        for (model, langs) in &first.f1 {
            for lang in langs.keys() {
                let v: Vec<f64> = seeds.iter().map(|s| s.f1[model][lang]).collect();
                out.entry(model.clone()).or_default().insert(lang.clone(), mean_std(&v));
            }
        }
    }
    out
}

/// Fusion weights of `model` averaged over seeds: language → adapter → weight.
pub fn mean_weights(seeds: &[SeedResult], model: &str, pooled: bool) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for s in seeds {
        let Some(r) = s.fusion.get(model) else { continue };
        for (i, lang) in r.languages.iter().enumerate() {
            let row = if pooled { &r.pooled[i] } else { &r.per_token[i] };
            for (a, w) in r.adapters.iter().zip(row) {
                *out.entry(lang.clone()).or_default().entry(a.clone()).or_insert(0.0) += w / seeds.len() as f64;
            }
        }
    }
    out
}

pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let data = prepare(config)?;
    let seeds = config.train.seeds.par_iter().map(|&s| run_seed(&data, s)).collect::<Result<Vec<_>>>()?;
    let topics = run_topics(&data)?;
    let zs = data.synth.zero_shot_languages();
    Ok(SuiteReport {
        la_accuracy: data.la_accuracy.clone(),
        f1_summary: summarize_f1(&seeds),
        majority_f1: zs.iter().map(|l| (l.clone(), majority_baseline_f1(&data.test[l].labels))).collect(),
        fusion_token: mean_weights(&seeds, "WL+AF+LA", false),
        fusion_pooled: mean_weights(&seeds, "WL+AF+LA", true),
        planted_shared: zs.iter().map(|l| (l.clone(), planted_shared_topics(&data.synth, l))).collect(),
        seeds,
        topics,
        seconds: start.elapsed().as_secs_f64(),
    })
}
