use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit, EncodedCorpus, LaMode, LaPolicy, ModelKind, ModelSpec, TrainConfig, TrainOutcome};
use crate::adapters::{
    swap_language_adapter, AdapterStack, BottleneckAdapter, FusionLayer, LanguageAdapter, LanguageAdapterBank, TaskSlot,
};
use crate::encoder::{mlm_loss_on_tape, run_mlm, set_frozen, Backbone, Classifier, MlmConfig, MlmReport};
use crate::error::{Error, Result};
use crate::numerics::ParamSet;

fn frozen_backbone(backbone: &Backbone, seed: u64) -> Backbone {
    let mut bb = backbone.clone();
    set_frozen(&mut bb, true, false);
    bb.reset_head(seed);
    bb
}

fn install(stack: &mut AdapterStack, la: LaMode, fixed: Option<&LanguageAdapter>) -> Result<()> {
    if let Some(a) = fixed {
        stack.install_language(a)?;
    }
    if let LaMode::PerExample { bank, fallback } = la {
        // the slot must exist; per-example overrides replace it during passes
        let (a, _) = bank.resolve(fallback, fallback)?;
        stack.install_language(a)?;
    }
    Ok(())
}

/// Trains one task adapter per layer (tag `ta.<tag>`) and a fresh head on a
/// frozen copy of `backbone`. `fixed_la`, if given, is stacked below the
/// task adapter and stays frozen.
#[allow(clippy::too_many_arguments)]
pub fn train_task_adapter(
    backbone: &Backbone,
    tag: &str,
    train: &EncodedCorpus,
    dev: &EncodedCorpus,
    cfg: &TrainConfig,
    seed: u64,
    fixed_la: Option<&LanguageAdapter>,
    la: LaMode,
) -> Result<TrainOutcome> {
    let bb = frozen_backbone(backbone, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (bb.config.n_layers, bb.d_model());
    let mut stack = AdapterStack::task(n, tag, d, cfg.bottleneck_for(d), &mut rng)?;
    install(&mut stack, la, fixed_la)?;
    let recipe = if fixed_la.is_some() || matches!(la, LaMode::PerExample { .. }) { "ta+la" } else { "ta" };
    fit(Classifier::new(bb, Some(stack))?, train, dev, cfg, seed, la, &format!("{recipe}.{tag}"))
}

/// Full fine-tuning: every backbone parameter and the head are trainable.
pub fn train_fft(
    backbone: &Backbone,
    tag: &str,
    train: &EncodedCorpus,
    dev: &EncodedCorpus,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut bb = backbone.clone();
    set_frozen(&mut bb, false, true);
    bb.reset_head(seed);
    fit(Classifier::new(bb, None)?, train, dev, cfg, seed, LaMode::Installed, &format!("fft.{tag}"))
}

/// Fusion layers over the member task-adapter sets (one adapter per layer
/// each). Members are frozen.
pub fn build_fusion_stack(members: &[Vec<BottleneckAdapter>], n_layers: usize, seed: u64) -> Result<AdapterStack> {
    if members.len() < 2 {
        return Err(Error::Config(format!("fusion needs at least two task adapters, got {}", members.len())));
    }
    if let Some(m) = members.iter().find(|m| m.len() != n_layers) {
        return Err(Error::Compatibility(format!("task adapter set has {} layers, backbone has {n_layers}", m.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4655_5345);
    let mut stack = AdapterStack::empty(n_layers);
    for (l, slot) in stack.layers.iter_mut().enumerate() {
        slot.task = TaskSlot::Fusion(FusionLayer::new(l, members.iter().map(|m| m[l].clone()).collect(), &mut rng)?);
    }
    Ok(stack)
}

/// Trains fusion projections and a fresh head on the mixed stream `train`;
/// backbone, member adapters and language adapters stay frozen.
pub fn train_fusion(
    backbone: &Backbone,
    members: &[Vec<BottleneckAdapter>],
    train: &EncodedCorpus,
    dev: &EncodedCorpus,
    cfg: &TrainConfig,
    seed: u64,
    la: LaMode,
) -> Result<TrainOutcome> {
    let bb = frozen_backbone(backbone, seed);
    if let Some(a) = members.iter().flatten().find(|a| a.width() != bb.d_model()) {
        return Err(Error::Compatibility(format!(
            "task adapter {} has width {}, backbone has {}",
            a.tag,
            a.width(),
            bb.d_model()
        )));
    }
    let mut stack = build_fusion_stack(members, bb.config.n_layers, seed)?;
    install(&mut stack, la, None)?;
    let recipe = if matches!(la, LaMode::PerExample { .. }) { "af+la" } else { "af" };
    fit(Classifier::new(bb, Some(stack))?, train, dev, cfg, seed, la, recipe)
}

#[derive(Clone, Debug)]
pub struct LaOutcome {
    pub adapter: LanguageAdapter,
    pub report: MlmReport,
    pub backbone_hash_before: String,
    pub backbone_hash_after: String,
}

/// Masked-language-model training of a language adapter on one language's
/// unlabeled token sequences. The backbone (including its prediction head)
/// stays frozen; the returned adapter is marked frozen.
pub fn train_language_adapter(
    backbone: &Backbone,
    lang: &str,
    corpus: &[Vec<usize>],
    mlm: &MlmConfig,
    bottleneck: usize,
) -> Result<LaOutcome> {
    let mut bb = backbone.clone();
    set_frozen(&mut bb, true, true);
    let before = bb.hash_all();
    let mut rng = ChaCha8Rng::seed_from_u64(mlm.seed ^ 0x4c41);
    let la = LanguageAdapter::new(lang, bb.config.n_layers, bb.d_model(), bottleneck, &mut rng)?;
    let mut stack = AdapterStack::empty(bb.config.n_layers);
    stack.install_language(&la)?;
    stack.set_trainable(true);
    let mut model = Classifier::new(bb, Some(stack))?;
    let report =
        run_mlm(&mut model, corpus, mlm, |m, tape, s| mlm_loss_on_tape(&m.backbone, m.stack.as_ref(), None, tape, s))?;
    let after = model.backbone.hash_all();
    if after != before {
        return Err(Error::Contract("backbone changed during language-adapter training".into()));
    }
    let layers = model.stack.expect("stack").layers.into_iter().filter_map(|l| l.language).collect();
    let mut adapter = LanguageAdapter { lang: lang.to_string(), layers };
    adapter.set_trainable(false);
    Ok(LaOutcome { adapter, report, backbone_hash_before: before, backbone_hash_after: after })
}

/// Anything that maps a token sequence to a check-worthy probability.
pub trait Scorer {
    fn score_ids(&self, ids: &[usize]) -> Result<f64>;
}

impl Scorer for Classifier {
    fn score_ids(&self, ids: &[usize]) -> Result<f64> {
        self.score(ids)
    }
}

/// Arithmetic mean of the member scores.
pub fn mean_ensemble_predict<S: Scorer>(members: &[S], ids: &[usize]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::Config(format!("an ensemble needs at least two members, got {}", members.len())));
    }
    let mut sum = 0.0;
    for m in members {
        sum += m.score_ids(ids)?;
    }
    Ok(sum / members.len() as f64)
}

/// Labeled data and shared components for [`train_baseline`].
#[derive(Clone, Debug)]
pub struct RecipeContext {
    pub backbone: Backbone,
    pub train: BTreeMap<String, EncodedCorpus>,
    pub dev: BTreeMap<String, EncodedCorpus>,
    pub la_bank: LanguageAdapterBank,
    /// Language whose adapter stands in for languages without one.
    pub fallback: String,
}

impl RecipeContext {
    fn split(&self, which: &BTreeMap<String, EncodedCorpus>, langs: &[String]) -> Result<EncodedCorpus> {
        let parts = langs
            .iter()
            .map(|l| which.get(l).ok_or_else(|| Error::Input(format!("no labeled corpus for {l}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedCorpus::concat(&langs.join("+"), &parts))
    }

    fn la_mode(&self) -> LaMode<'_> {
        LaMode::PerExample { bank: &self.la_bank, fallback: &self.fallback }
    }
}

/// A trained model of any kind, ready for scoring.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    /// One classifier, or the ensemble members.
    pub members: Vec<Classifier>,
    /// Language adapters available for swapping at inference.
    pub la_bank: Option<LanguageAdapterBank>,
    pub fallback: String,
    /// Every training run that produced this model, members first.
    pub outcomes: Vec<TrainOutcome>,
}

/// Result of preparing a model for one target language.
pub struct Prepared {
    pub members: Vec<Classifier>,
    /// Language adapter actually installed, if any.
    pub installed_la: Option<String>,
    pub fallback_used: bool,
}

impl TrainedModel {
    /// Swaps in the target language's adapter (or the fallback) when the
    /// model has a language-adapter slot.
    pub fn for_language(&self, lang: &str) -> Result<Prepared> {
        let mut out = Prepared { members: Vec::new(), installed_la: None, fallback_used: false };
        for m in &self.members {
            match (&self.la_bank, &m.stack) {
                (Some(bank), Some(stack)) if stack.has_language_slot() => {
                    let swap = swap_language_adapter(stack, bank, lang, &self.fallback)?;
                    out.installed_la = Some(swap.installed.clone());
                    out.fallback_used |= swap.fallback;
                    out.members.push(Classifier::new(m.backbone.clone(), Some(swap.stack))?);
                }
                _ => out.members.push(m.clone()),
            }
        }
        Ok(out)
    }

    pub fn id(&self) -> String {
        self.spec.id()
    }
}

impl Prepared {
    pub fn score(&self, ids: &[usize]) -> Result<f64> {
        if self.members.len() == 1 {
            self.members[0].score(ids)
        } else {
            mean_ensemble_predict(&self.members, ids)
        }
    }
}

/// Trains the model described by `spec` from scratch (member task adapters
/// included) with one seed.
pub fn train_baseline(spec: &ModelSpec, ctx: &RecipeContext, cfg: &TrainConfig, seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    let src = &spec.sources;
    let bb = &ctx.backbone;
    let own_la = |l: &str| -> Result<&LanguageAdapter> {
        match spec.la_policy {
            LaPolicy::FallbackDefault => Ok(ctx.la_bank.resolve(l, &ctx.fallback)?.0),
            _ => ctx.la_bank.get(l).ok_or_else(|| Error::Config(format!("no language adapter for source {l}"))),
        }
    };
    let uses_la = spec.la_policy != LaPolicy::None;
    let mut outcomes = Vec::new();
    let members = match spec.kind {
        ModelKind::FftSingle | ModelKind::WlFft => {
            let (tr, dv) = (ctx.split(&ctx.train, src)?, ctx.split(&ctx.dev, src)?);
            outcomes.push(train_fft(bb, &src.join("+"), &tr, &dv, cfg, seed)?);
            vec![outcomes[0].model.clone()]
        }
        ModelKind::TaSingle | ModelKind::TaLaSingle => {
            let (tr, dv) = (ctx.split(&ctx.train, src)?, ctx.split(&ctx.dev, src)?);
            let la = if uses_la { Some(own_la(&src[0])?) } else { None };
            outcomes.push(train_task_adapter(bb, &src[0], &tr, &dv, cfg, seed, la, LaMode::Installed)?);
            vec![outcomes[0].model.clone()]
        }
        ModelKind::WlTa | ModelKind::WlTaLa => {
            let (tr, dv) = (ctx.split(&ctx.train, src)?, ctx.split(&ctx.dev, src)?);
            let la = if uses_la { ctx.la_mode() } else { LaMode::Installed };
            outcomes.push(train_task_adapter(bb, "wl", &tr, &dv, cfg, seed, None, la)?);
            vec![outcomes[0].model.clone()]
        }
        ModelKind::WlAf | ModelKind::WlAfLa | ModelKind::MeanEnsemble => {
            let mut sets = Vec::new();
            let mut models = Vec::new();
            for l in src {
                let one = vec![l.clone()];
                let (tr, dv) = (ctx.split(&ctx.train, &one)?, ctx.split(&ctx.dev, &one)?);
                let la = if uses_la { Some(own_la(l)?) } else { None };
                let o = train_task_adapter(bb, l, &tr, &dv, cfg, seed, la, LaMode::Installed)?;
                sets.push(o.model.stack.as_ref().and_then(AdapterStack::task_adapter_set).expect("task stack"));
                models.push(o.model.clone());
                outcomes.push(o);
            }
            if spec.kind == ModelKind::MeanEnsemble {
                models
            } else {
                let (tr, dv) = (ctx.split(&ctx.train, src)?, ctx.split(&ctx.dev, src)?);
                let la = if uses_la { ctx.la_mode() } else { LaMode::Installed };
                let o = train_fusion(bb, &sets, &tr, &dv, cfg, seed, la)?;
                let m = o.model.clone();
                outcomes.push(o);
                vec![m]
            }
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        members,
        la_bank: uses_la.then(|| ctx.la_bank.clone()),
        fallback: ctx.fallback.clone(),
        outcomes,
    })
}
