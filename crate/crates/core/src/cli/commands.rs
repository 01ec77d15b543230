use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::artifacts::{
    load_backbone, load_la_bank, load_model, relative_to, DataDir, LoadedModel, ModelDescriptor, BACKBONE_FILE,
    LA_FILE, VOCAB_FILE,
};
use super::config::{resolve, Overrides, PipelineConfig, Resolved, Stage};
use super::manifest::{create_run_dir, finish, sha256_path, RunManifest};
use super::{Cli, Command, EvalFlags, OptimFlags, RunArgs, TrainFlags};
use crate::adapters::io::{load_language_adapter, save_language_adapter};
use crate::adapters::AdapterStack;
use crate::datakit::{load_predictions, synth_generate, Corpus, Split, Tokenizer};
use crate::encoder::{masked_accuracy, pretrain_backbone_mlm, set_frozen, Classifier, EncoderConfig};
use crate::error::{Error, Result};
use crate::evalkit::{
    entity_sliced_scores, evaluate_model, fusion_attention_report, integrated_gradients, kappa_report,
    param_size_report, write_attributions_jsonl, Scope, SizeEntry, RESIDUAL_TOLERANCE,
};
use crate::topics::{export_topical_tsv, run_topical, TokenSet};
use crate::training::{
    train_baseline, train_fusion, train_language_adapter, train_task_adapter, write_run_dir, EncodedCorpus, LaMode,
    LaPolicy, ModelKind, ModelSpec, RecipeContext,
};

/// Run directory plus the manifest being assembled.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    start: Instant,
}

impl Run {
    fn open(cli: &Cli, args: &RunArgs, command: &str, resolved: &Resolved, seeds: Vec<u64>) -> Result<Self> {
        let dir = create_run_dir(args.out.as_deref(), &cli.out_root, command)?;
        let mut manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(&resolved.config)?,
            config_sources: resolved.sources.clone(),
            seeds,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timing_files: Vec::new(),
            wall_clock_seconds: 0.0,
        };
        if let Some(c) = &args.config {
            manifest.inputs.insert(c.display().to_string(), sha256_path(c)?);
        }
        Ok(Run { dir, manifest, start: Instant::now() })
    }

    fn input(&mut self, p: &Path) -> Result<()> {
        let h = sha256_path(p)?;
        self.manifest.inputs.insert(p.display().to_string(), h);
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn close(mut self) -> Result<PathBuf> {
        self.manifest.wall_clock_seconds = self.start.elapsed().as_secs_f64();
        finish(&self.dir, self.manifest)?;
        Ok(self.dir)
    }
}

fn optim_overrides(o: &OptimFlags) -> Overrides {
    Overrides { seed: o.seed, epochs: o.epochs, lr: o.lr, batch_size: o.batch_size, ..Default::default() }
}

fn train_overrides(t: &TrainFlags) -> Overrides {
    Overrides {
        max_len: t.max_len,
        metric: t.metric,
        threshold: t.threshold,
        la_fallback: t.la_fallback.clone(),
        ..optim_overrides(&t.optim)
    }
}

fn eval_overrides(e: &EvalFlags) -> Overrides {
    Overrides { metric: e.metric, threshold: e.threshold, la_fallback: e.la_fallback.clone(), ..Default::default() }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn log(msg: impl AsRef<str>) {
    eprintln!("wlfusion: {}", msg.as_ref());
}

pub(super) fn dispatch(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::GenSynth { run, seed } => gen_synth(cli, run, *seed),
        Command::PretrainBackbone { run, data, optim, max_len } => pretrain_backbone(cli, run, data, optim, *max_len),
        Command::PretrainLa { run, backbone, data, lang, optim } => pretrain_la(cli, run, backbone, data, lang, optim),
        Command::TrainTa { run, backbone, data, lang, la, train } => {
            train_ta(cli, run, backbone, data, lang, la.as_deref(), train)
        }
        Command::TrainFusion { run, backbone, data, ta, la, train } => {
            train_af(cli, run, backbone, data, ta, la, train)
        }
        Command::TrainBaseline { run, backbone, data, kind, sources, la, train } => {
            baseline(cli, run, backbone, data, kind, sources, la, train)
        }
        Command::Evaluate { run, model, data, langs, scope, topical, eval } => {
            evaluate(cli, run, model, data, langs, *scope, topical.as_deref(), eval)
        }
        Command::TopicalSplit { run, backbone, data, seed, k, tau, refit_k, min_support } => {
            let flags = Overrides {
                seed: *seed,
                k: *k,
                tau: *tau,
                refit_k: *refit_k,
                min_support: *min_support,
                ..Default::default()
            };
            topical_split(cli, run, backbone, data, &flags)
        }
        Command::Interpret { run, model, data, langs, eval } => interpret(cli, run, model, data, langs, eval),
        Command::Attribute { run, model, data, lang, n, steps, eval } => {
            attribute(cli, run, model, data, lang, *n, *steps, eval)
        }
        Command::Report { run, model, compare, entity_preds, data, lang } => {
            report(cli, run, model, compare, entity_preds, data.as_deref(), lang.as_deref())
        }
    }
}

fn gen_synth(cli: &Cli, args: &RunArgs, seed: Option<u64>) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &Overrides { seed, ..Default::default() }, Stage::Synth)?;
    let run = Run::open(cli, args, "gen-synth", &r, vec![r.config.synth.seed])?;
    let out = synth_generate(&r.config.synth)?;
    out.write_dir(&run.dir)?;
    log(format!("wrote {} languages to {}", out.languages.len(), run.dir.display()));
    run.close()
}

fn pretrain_backbone(
    cli: &Cli,
    args: &RunArgs,
    data: &Path,
    optim: &OptimFlags,
    max_len: Option<usize>,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &Overrides { max_len, ..optim_overrides(optim) }, Stage::Backbone)?;
    let c = &r.config;
    let dd = DataDir::load(data)?;
    let mut run = Run::open(cli, args, "pretrain-backbone", &r, vec![c.backbone_mlm.seed])?;
    run.input(data)?;
    let tok = Tokenizer::build(dd.vocabulary_texts(), c.encoder.max_len);
    let enc = EncoderConfig { vocab_size: tok.vocab_size(), ..c.encoder.clone() };
    let corpus: Vec<Vec<usize>> =
        dd.languages.values().flat_map(|d| d.unlabeled.iter().map(|t| tok.encode(t))).collect();
    if corpus.is_empty() {
        return Err(Error::Input(format!("no unlabeled text in {}", data.display())));
    }
    log(format!("pretraining on {} sequences, vocabulary {}", corpus.len(), tok.vocab_size()));
    let (bb, report) = pretrain_backbone_mlm(&enc, &corpus, &c.backbone_mlm)?;
    bb.save(&run.path(BACKBONE_FILE))?;
    tok.save(&run.path(VOCAB_FILE))?;
    write_json(&run.path("mlm_report.json"), &report)?;
    run.close()
}

fn pretrain_la(
    cli: &Cli,
    args: &RunArgs,
    backbone: &Path,
    data: &Path,
    lang: &str,
    optim: &OptimFlags,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &optim_overrides(optim), Stage::Language)?;
    let c = &r.config;
    let (bb, tok) = load_backbone(backbone)?;
    let dd = DataDir::load(data)?;
    let corpus: Vec<Vec<usize>> = dd.lang(lang)?.unlabeled.iter().map(|t| tok.encode(t)).collect();
    if corpus.is_empty() {
        return Err(Error::Input(format!("no unlabeled text for {lang}")));
    }
    let mut run = Run::open(cli, args, "pretrain-la", &r, vec![c.la_mlm.seed])?;
    run.input(backbone)?;
    run.input(data)?;
    let o = train_language_adapter(&bb, lang, &corpus, &c.la_mlm, c.train.bottleneck_for(bb.d_model()))?;
    save_language_adapter(&run.path(LA_FILE), &o.adapter)?;
    let mut stack = AdapterStack::empty(bb.config.n_layers);
    stack.install_language(&o.adapter)?;
    let seed = c.la_mlm.seed ^ 0xacc;
    let without = masked_accuracy(&bb, None, &corpus, c.la_mlm.mask_prob, seed)?;
    let with = masked_accuracy(&bb, Some(&stack), &corpus, c.la_mlm.mask_prob, seed)?;
    write_json(
        &run.path("la_report.json"),
        &serde_json::json!({
            "lang": lang,
            "epoch_losses": o.report.epoch_losses,
            "masked_accuracy_without": without,
            "masked_accuracy_with": with,
            "backbone_hash_before": o.backbone_hash_before,
            "backbone_hash_after": o.backbone_hash_after,
        }),
    )?;
    run.close()
}

/// Backbone, tokenizer cut to the training budget, and the data directory.
fn training_inputs(
    backbone: &Path,
    data: &Path,
    c: &PipelineConfig,
) -> Result<(crate::encoder::Backbone, Tokenizer, DataDir)> {
    let (bb, mut tok) = load_backbone(backbone)?;
    tok.max_len = c.train.max_len.min(bb.config.max_len);
    Ok((bb, tok, DataDir::load(data)?))
}

fn encode_split(dd: &DataDir, tok: &Tokenizer, langs: &[String], split: Split) -> Result<EncodedCorpus> {
    let parts = langs.iter().map(|l| dd.encoded(tok, l, split)).collect::<Result<Vec<_>>>()?;
    Ok(EncodedCorpus::concat(&format!("{}.{split}", langs.join("+")), &parts.iter().collect::<Vec<_>>()))
}

fn train_ta(
    cli: &Cli,
    args: &RunArgs,
    backbone: &Path,
    data: &Path,
    lang: &str,
    la: Option<&Path>,
    flags: &TrainFlags,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &train_overrides(flags), Stage::Train)?;
    let c = &r.config;
    let seed = c.train.seeds[0];
    let (bb, tok, dd) = training_inputs(backbone, data, c)?;
    let one = [lang.to_string()];
    let (tr, dv) = (encode_split(&dd, &tok, &one, Split::Train)?, encode_split(&dd, &tok, &one, Split::Dev)?);
    let fixed = la.map(|p| load_language_adapter(&p.join(LA_FILE))).transpose()?;
    let mut run = Run::open(cli, args, "train-ta", &r, vec![seed])?;
    run.input(backbone)?;
    run.input(data)?;
    if let Some(p) = la {
        run.input(p)?;
    }
    let o = train_task_adapter(&bb, lang, &tr, &dv, &c.train, seed, fixed.as_ref(), LaMode::Installed)?;
    log(format!("{}: best dev {:.4} at epoch {}", o.recipe, o.best_dev, o.best_epoch));
    write_run_dir(&run.dir, &o, &c.train, &format!("ta.{lang}"))?;
    let (kind, la_policy) =
        if la.is_some() { (ModelKind::TaLaSingle, LaPolicy::Stacked) } else { (ModelKind::TaSingle, LaPolicy::None) };
    ModelDescriptor {
        spec: ModelSpec { kind, sources: one.to_vec(), la_policy },
        backbone: relative_to(backbone, &run.dir)?,
        members: vec!["model.bin".into()],
        language_adapters: la.map(|p| relative_to(p, &run.dir)).transpose()?.into_iter().collect(),
        fallback: c.fallback.clone(),
        max_len: tok.max_len,
    }
    .write(&run.dir)?;
    run.close()
}

fn train_af(
    cli: &Cli,
    args: &RunArgs,
    backbone: &Path,
    data: &Path,
    tas: &[PathBuf],
    las: &[PathBuf],
    flags: &TrainFlags,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &train_overrides(flags), Stage::Train)?;
    let c = &r.config;
    let seed = c.train.seeds[0];
    if tas.len() < 2 {
        return Err(Error::Config(format!("fusion needs at least two --ta runs, got {}", tas.len())));
    }
    let (bb, tok, dd) = training_inputs(backbone, data, c)?;
    let mut sources = Vec::new();
    let mut members = Vec::new();
    for t in tas {
        let d = ModelDescriptor::read(t)?;
        let m = Classifier::load(&bb, &t.join(&d.members[0]))?;
        let set = m
            .stack
            .as_ref()
            .and_then(AdapterStack::task_adapter_set)
            .ok_or_else(|| Error::Config(format!("{} is not a single task-adapter run", t.display())))?;
        sources.extend(d.spec.sources);
        members.push(set);
    }
    let (tr, dv) = (encode_split(&dd, &tok, &sources, Split::Train)?, encode_split(&dd, &tok, &sources, Split::Dev)?);
    let bank = load_la_bank(las)?;
    let mut run = Run::open(cli, args, "train-fusion", &r, vec![seed])?;
    for p in
        [backbone, data].into_iter().chain(tas.iter().map(PathBuf::as_path)).chain(las.iter().map(PathBuf::as_path))
    {
        run.input(p)?;
    }
    let la_mode =
        if las.is_empty() { LaMode::Installed } else { LaMode::PerExample { bank: &bank, fallback: &c.fallback } };
    let o = train_fusion(&bb, &members, &tr, &dv, &c.train, seed, la_mode)?;
    log(format!("{}: best dev {:.4} at epoch {}", o.recipe, o.best_dev, o.best_epoch));
    write_run_dir(&run.dir, &o, &c.train, "fusion")?;
    let kind = if las.is_empty() { ModelKind::WlAf } else { ModelKind::WlAfLa };
    let la_policy = if las.is_empty() { LaPolicy::None } else { LaPolicy::Stacked };
    ModelDescriptor {
        spec: ModelSpec { kind, sources, la_policy },
        backbone: relative_to(backbone, &run.dir)?,
        members: vec!["model.bin".into()],
        language_adapters: las.iter().map(|p| relative_to(p, &run.dir)).collect::<Result<_>>()?,
        fallback: c.fallback.clone(),
        max_len: tok.max_len,
    }
    .write(&run.dir)?;
    run.close()
}

#[allow(clippy::too_many_arguments)]
fn baseline(
    cli: &Cli,
    args: &RunArgs,
    backbone: &Path,
    data: &Path,
    kind: &str,
    sources: &[String],
    las: &[PathBuf],
    flags: &TrainFlags,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &train_overrides(flags), Stage::Train)?;
    let c = &r.config;
    let seed = c.train.seeds[0];
    let kind: ModelKind = kind.parse()?;
    let spec = ModelSpec::new(kind, &sources.iter().map(String::as_str).collect::<Vec<_>>());
    spec.validate()?;
    let (bb, tok, dd) = training_inputs(backbone, data, c)?;
    let mut train = BTreeMap::new();
    let mut dev = BTreeMap::new();
    for l in sources {
        train.insert(l.clone(), dd.encoded(&tok, l, Split::Train)?);
        dev.insert(l.clone(), dd.encoded(&tok, l, Split::Dev)?);
    }
    let ctx = RecipeContext { backbone: bb, train, dev, la_bank: load_la_bank(las)?, fallback: c.fallback.clone() };
    let mut run = Run::open(cli, args, "train-baseline", &r, vec![seed])?;
    for p in [backbone, data].into_iter().chain(las.iter().map(PathBuf::as_path)) {
        run.input(p)?;
    }
    let m = train_baseline(&spec, &ctx, &c.train, seed)?;
    for (i, o) in m.outcomes.iter().enumerate() {
        log(format!("{}: best dev {:.4} at epoch {}", o.recipe, o.best_dev, o.best_epoch));
        write_run_dir(&run.dir.join("stages").join(format!("{i}.{}", o.recipe)), o, &c.train, &o.recipe)?;
    }
    let mut members = Vec::new();
    for (i, mm) in m.members.iter().enumerate() {
        let name = format!("member{i}.bin");
        mm.save(&run.path(&name), &spec.id())?;
        members.push(name);
    }
    ModelDescriptor {
        spec,
        backbone: relative_to(backbone, &run.dir)?,
        members,
        language_adapters: las.iter().map(|p| relative_to(p, &run.dir)).collect::<Result<_>>()?,
        fallback: c.fallback.clone(),
        max_len: tok.max_len,
    }
    .write(&run.dir)?;
    run.close()
}

/// Model with the fallback taken from the flag or file when one was given.
fn model_for_eval(path: &Path, flags: &EvalFlags, r: &Resolved) -> Result<LoadedModel> {
    let fallback =
        (r.sources.get("fallback").map(String::as_str) != Some("default")).then_some(r.config.fallback.as_str());
    load_model(path, &flags.la, fallback)
}

/// Ids of the `scope` set of a topical-split run.
fn topical_ids(run: &Path, scope: Scope) -> Result<BTreeSet<String>> {
    let path = run.join("topical.tsv");
    let text = fs::read_to_string(&path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let want = scope.to_string();
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            (cols.last() == Some(&want.as_str())).then(|| cols[0].to_string())
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cli: &Cli,
    args: &RunArgs,
    model: &Path,
    data: &Path,
    langs: &[String],
    scope: Scope,
    topical: Option<&Path>,
    flags: &EvalFlags,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &eval_overrides(flags), Stage::Eval)?;
    let lm = model_for_eval(model, flags, &r)?;
    let dd = DataDir::load(data)?;
    let keep = match scope {
        Scope::Global | Scope::Local => {
            let t =
                topical.ok_or_else(|| Error::Config(format!("--scope {scope} needs --topical <topical-split run>")))?;
            Some(topical_ids(t, scope)?)
        }
        _ => None,
    };
    let sources = &lm.model.spec.sources;
    let langs: Vec<String> = if langs.is_empty() {
        dd.test_languages().into_iter().filter(|l| scope != Scope::ZeroShot || !sources.contains(l)).collect()
    } else {
        if scope == Scope::ZeroShot {
            if let Some(l) = langs.iter().find(|l| sources.contains(l)) {
                return Err(Error::Config(format!("{l} is a training language, not zero-shot")));
            }
        }
        langs.to_vec()
    };
    let mut encoded = BTreeMap::new();
    for l in &langs {
        if let Some(c) = dd.languages.get(l).and_then(|d| d.test.as_ref()) {
            let c = match &keep {
                Some(ids) => Corpus {
                    examples: c.examples.iter().filter(|e| ids.contains(&e.id)).cloned().collect(),
                    ..c.clone()
                },
                None => c.clone(),
            };
            encoded.insert(l.clone(), EncodedCorpus::new(&lm.tokenizer, &c)?);
        }
    }
    let corpora: Vec<(String, Option<&EncodedCorpus>)> = langs.iter().map(|l| (l.clone(), encoded.get(l))).collect();
    let mut run = Run::open(cli, args, "evaluate", &r, Vec::new())?;
    for p in [model, data].into_iter().chain(topical).chain(flags.la.iter().map(PathBuf::as_path)) {
        run.input(p)?;
    }
    let c = &r.config;
    let (report, scored) = evaluate_model(&lm.model, &corpora, scope, c.train.selection_metric, c.train.threshold)?;
    report.write(&run.path("eval.tsv"), Some(&run.path("eval.json")))?;
    scored.save(&run.path("predictions.tsv"))?;
    eprint!("{}", report.to_tsv());
    run.close()
}

type Tokenized = BTreeMap<String, (Vec<String>, Vec<Vec<usize>>)>;

fn view(m: &Tokenized) -> BTreeMap<String, TokenSet<'_>> {
    m.iter().map(|(l, (i, t))| (l.clone(), (&i[..], &t[..]))).collect()
}

fn topical_split(cli: &Cli, args: &RunArgs, backbone: &Path, data: &Path, flags: &Overrides) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), flags, Stage::Topics)?;
    let t = &r.config.topics;
    let (bb, tok) = load_backbone(backbone)?;
    let dd = DataDir::load(data)?;
    let tokenized = |c: &Corpus| -> (Vec<String>, Vec<Vec<usize>>) {
        (c.examples.iter().map(|e| e.id.clone()).collect(), c.examples.iter().map(|e| tok.encode(&e.text)).collect())
    };
    let train_sets: BTreeMap<String, _> = dd
        .training_languages()
        .iter()
        .map(|l| Ok((l.clone(), tokenized(dd.split(l, Split::Train)?))))
        .collect::<Result<_>>()?;
    let test_sets: BTreeMap<String, _> = dd
        .test_languages()
        .iter()
        .map(|l| Ok((l.clone(), tokenized(dd.split(l, Split::Test)?))))
        .collect::<Result<_>>()?;
    let mut run = Run::open(cli, args, "topical-split", &r, vec![t.seed])?;
    run.input(backbone)?;
    run.input(data)?;
    let out = run_topical(&bb, &view(&train_sets), &view(&test_sets), t.k, t.tau, &t.refit, t.seed)?;
    write_json(&run.path("topic_model.json"), &out.model)?;
    let mut s = String::from("lang\tsplit\tid\ttopic\tdistance\n");
    for (split, sets) in
        [("train", out.train.iter().collect::<Vec<_>>()), ("test", out.test.iter().map(|(l, (a, _))| (l, a)).collect())]
    {
        for (l, a) in sets {
            for x in a {
                s.push_str(&format!("{l}\t{split}\t{}\t{}\t{:.12}\n", x.id, x.topic, x.distance));
            }
        }
    }
    fs::write(run.path("assignments.tsv"), s)?;
    let tests: BTreeMap<String, Corpus> = dd
        .test_languages()
        .iter()
        .map(|l| Ok((l.clone(), dd.split(l, Split::Test)?.clone())))
        .collect::<Result<_>>()?;
    export_topical_tsv(&run.path("topical.tsv"), &out.split, &tests)?;
    write_json(&run.path("split.json"), &out.split)?;
    fs::write(run.path("graph.dot"), out.graph.to_dot())?;
    fs::write(run.path("graph.json"), out.graph.to_json()?)?;
    log(format!(
        "τ = {:.4}; {} global and {} local test examples; {} graph edges",
        out.model.tau,
        out.split.global.len(),
        out.split.local.len(),
        out.graph.edges.len()
    ));
    run.close()
}

fn interpret(
    cli: &Cli,
    args: &RunArgs,
    model: &Path,
    data: &Path,
    langs: &[String],
    flags: &EvalFlags,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &eval_overrides(flags), Stage::Eval)?;
    let lm = model_for_eval(model, flags, &r)?;
    let dd = DataDir::load(data)?;
    let langs = if langs.is_empty() { dd.test_languages() } else { langs.to_vec() };
    let encoded = langs.iter().map(|l| dd.encoded(&lm.tokenizer, l, Split::Test)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(String, &EncodedCorpus)> = langs.iter().cloned().zip(&encoded).collect();
    let mut run = Run::open(cli, args, "interpret", &r, Vec::new())?;
    for p in [model, data].into_iter().chain(flags.la.iter().map(PathBuf::as_path)) {
        run.input(p)?;
    }
    let rep = fusion_attention_report(&lm.model, &pairs)?;
    fs::write(run.path("fusion.csv"), rep.to_csv())?;
    fs::write(run.path("heatmap_token.csv"), rep.heatmap_csv(false))?;
    fs::write(run.path("heatmap_pooled.csv"), rep.heatmap_csv(true))?;
    write_json(&run.path("fusion.json"), &rep)?;
    for l in &langs {
        log(format!("{l}: top adapter {}", rep.top_adapter(l, false).unwrap_or("-")));
    }
    run.close()
}

#[allow(clippy::too_many_arguments)]
fn attribute(
    cli: &Cli,
    args: &RunArgs,
    model: &Path,
    data: &Path,
    lang: &str,
    n: usize,
    steps: usize,
    flags: &EvalFlags,
) -> Result<PathBuf> {
    let r = resolve(args.config.as_deref(), &eval_overrides(flags), Stage::Eval)?;
    let lm = model_for_eval(model, flags, &r)?;
    let prepared = lm.model.for_language(lang)?;
    let [clf] = prepared.members.as_slice() else {
        return Err(Error::Config("attribution needs a single-network model, not an ensemble".into()));
    };
    let dd = DataDir::load(data)?;
    let corpus = dd.split(lang, Split::Test)?;
    let mut run = Run::open(cli, args, "attribute", &r, Vec::new())?;
    for p in [model, data].into_iter().chain(flags.la.iter().map(PathBuf::as_path)) {
        run.input(p)?;
    }
    let items = corpus
        .examples
        .par_iter()
        .take(n)
        .map(|e| {
            let ids = lm.tokenizer.encode(&e.text);
            let mut a = integrated_gradients(clf, &e.id, &ids, steps, None)?;
            a.tokens = a.token_ids.iter().map(|&t| lm.tokenizer.token(t).unwrap_or("?").to_string()).collect();
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    write_attributions_jsonl(&run.path("attributions.jsonl"), &items)?;
    let max_residual = items.iter().map(|a| a.residual.abs()).fold(0.0, f64::max);
    let over = items.iter().filter(|a| a.residual.abs() > RESIDUAL_TOLERANCE).count();
    write_json(
        &run.path("summary.json"),
        &serde_json::json!({
            "lang": lang,
            "examples": items.len(),
            "steps": steps,
            "max_abs_residual": max_residual,
            "residual_tolerance": RESIDUAL_TOLERANCE,
            "over_tolerance": over,
        }),
    )?;
    log(format!("{} attributions, max |residual| {max_residual:.2e}", items.len()));
    if over > 0 {
        log(format!("warning: {over} residuals above {RESIDUAL_TOLERANCE:.0e}; more --steps tightens them"));
    }
    run.close()
}

/// Marks the backbone frozen (head excepted) when the model has adapters,
/// as during adapter training.
fn as_trained(mut c: Classifier) -> Classifier {
    if c.stack.is_some() {
        set_frozen(&mut c.backbone, true, false);
    }
    c
}

fn report(
    cli: &Cli,
    args: &RunArgs,
    models: &[PathBuf],
    compare: &[PathBuf],
    entity_preds: &[PathBuf],
    data: Option<&Path>,
    lang: Option<&str>,
) -> Result<PathBuf> {
    if models.is_empty() && compare.is_empty() && entity_preds.is_empty() {
        return Err(Error::Config("nothing to report: give --model, --compare or --entity-preds".into()));
    }
    let r = resolve(args.config.as_deref(), &Overrides::default(), Stage::Eval)?;
    let mut run = Run::open(cli, args, "report", &r, Vec::new())?;
    for p in models.iter().chain(compare).chain(entity_preds).map(PathBuf::as_path).chain(data) {
        run.input(p)?;
    }
    if !models.is_empty() {
        let mut loaded = Vec::new();
        let mut timing = String::from("model\trecipe\tseed\tepoch\tseconds\n");
        for m in models {
            let lm = load_model(m, &[], None)?;
            for (i, c) in lm.model.members.into_iter().enumerate() {
                loaded.push((format!("{}#{i}", lm.descriptor.spec.id()), as_trained(c)));
            }
            let mut files = vec![m.join("timing.tsv")];
            if let Ok(rd) = fs::read_dir(m.join("stages")) {
                let mut stages: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path().join("timing.tsv"))).collect();
                stages.sort();
                files.extend(stages);
            }
            for f in files.iter().filter(|f| f.exists()) {
                for line in fs::read_to_string(f)?.lines().skip(1) {
                    timing.push_str(&format!("{}\t{line}\n", lm.descriptor.spec.id()));
                }
            }
        }
        let entries: Vec<SizeEntry> = loaded.iter().map(|(k, c)| SizeEntry { kind: k.clone(), model: c }).collect();
        let rows = param_size_report(&entries, &run.path("sizes"))?;
        let mut s = String::from("model\ttrainable\tartifact_bytes\tfull_checkpoint_bytes\tratio\n");
        for row in &rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.6}\n",
                row.kind, row.trainable, row.artifact_bytes, row.full_checkpoint_bytes, row.ratio
            ));
        }
        fs::write(run.path("sizes.tsv"), s)?;
        write_json(&run.path("sizes.json"), &rows)?;
        fs::write(run.path("timing.tsv"), timing)?;
    }
    if !compare.is_empty() {
        let group = |p: &Path| -> Result<BTreeMap<String, Vec<u8>>> {
            let mut m: BTreeMap<String, Vec<u8>> = BTreeMap::new();
            for row in load_predictions(p)? {
                m.entry(row.lang).or_default().push(row.pred_label);
            }
            Ok(m)
        };
        let k = kappa_report(&group(&compare[0])?, &group(&compare[1])?)?;
        let mut s = String::from("language\tkappa\n");
        for (l, v) in &k.per_language {
            s.push_str(&format!("{l}\t{}\n", v.map_or("NA".into(), |v| format!("{v:.6}"))));
        }
        s.push_str(&format!("pooled\t{}\n", k.pooled.map_or("NA".into(), |v| format!("{v:.6}"))));
        fs::write(run.path("kappa.tsv"), s)?;
        write_json(&run.path("kappa.json"), &k)?;
    }
    if !entity_preds.is_empty() {
        let (Some(data), Some(lang)) = (data, lang) else {
            return Err(Error::Config("--entity-preds needs --data and --lang".into()));
        };
        let dd = DataDir::load(data)?;
        let examples = &dd.split(lang, Split::Test)?.examples;
        let per_seed = entity_preds
            .iter()
            .map(|p| {
                let by_id: BTreeMap<String, u8> =
                    load_predictions(p)?.into_iter().map(|r| (r.id, r.pred_label)).collect();
                examples
                    .iter()
                    .map(|e| {
                        by_id
                            .get(&e.id)
                            .copied()
                            .ok_or_else(|| Error::Input(format!("{} lacks example {}", p.display(), e.id)))
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = entity_sliced_scores(examples, &per_seed)?;
        let mut s = String::from("entity\tn_examples\tf1_mean\tf1_std\n");
        let na = |v: Option<f64>| v.map_or("NA".into(), |v| format!("{v:.6}"));
        for row in &rows {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", row.entity, row.n_examples, na(row.f1_mean), na(row.f1_std)));
        }
        fs::write(run.path("entities.tsv"), s)?;
    }
    run.close()
}
