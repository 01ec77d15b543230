//! Bottleneck adapters, per-layer adapter stacks, and adapter fusion.
//!
//! A layer slot holds an optional language adapter followed by either one
//! task adapter or a fusion block over several frozen task adapters. The
//! slot is applied to the feed-forward output of its encoder layer, inside
//! the residual branch.

mod fusion;
pub mod io;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use fusion::{fusion_forward, fusion_forward_on_tape, FusionAttentionRecord, FusionBlock, FusionLayer};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{uniform, ParamSet, Parameter, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Task,
    Language,
}

impl AdapterKind {
    pub fn prefix(self) -> &'static str {
        match self {
            AdapterKind::Task => "ta",
            AdapterKind::Language => "la",
        }
    }
}

/// Residual bottleneck: `h + relu(h·W_down + b_down)·W_up + b_up`.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckAdapter {
    pub kind: AdapterKind,
    /// `ta.<lang>` or `la.<lang>`.
    pub tag: String,
    pub w_down: Parameter,
    pub b_down: Parameter,
    pub w_up: Parameter,
    pub b_up: Parameter,
}

impl BottleneckAdapter {
    /// Random down projection, zero up projection: the adapter starts as the
    /// identity map.
    pub fn new(layer: usize, kind: AdapterKind, lang: &str, d: usize, b: usize, rng: &mut impl Rng) -> Result<Self> {
        if b == 0 || b >= d {
            return Err(Error::Config(format!("bottleneck width {b} must be in 1..{d}")));
        }
        let tag = format!("{}.{lang}", kind.prefix());
        let base = format!("adapters.layer{layer}.{tag}");
        let scale = (1.0 / d as f64).sqrt();
        Ok(BottleneckAdapter {
            kind,
            w_down: Parameter::new(format!("{base}.w_down"), uniform(rng, &[d, b], scale), true),
            b_down: Parameter::new(format!("{base}.b_down"), Tensor::zeros(&[b]), true),
            w_up: Parameter::new(format!("{base}.w_up"), Tensor::zeros(&[b, d]), true),
            b_up: Parameter::new(format!("{base}.b_up"), Tensor::zeros(&[d]), true),
            tag,
        })
    }

    pub fn width(&self) -> usize {
        self.w_down.value.shape()[0]
    }

    pub fn bottleneck(&self) -> usize {
        self.w_down.value.shape()[1]
    }

    pub fn lang(&self) -> &str {
        self.tag.split_once('.').map(|(_, l)| l).unwrap_or(&self.tag)
    }

    /// Renames all parameters for a different layer index.
    pub(crate) fn relabel(&mut self, layer: usize) {
        let base = format!("adapters.layer{layer}.{}", self.tag);
        self.w_down.name = format!("{base}.w_down");
        self.b_down.name = format!("{base}.b_down");
        self.w_up.name = format!("{base}.w_up");
        self.b_up.name = format!("{base}.b_up");
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let d = tape.value(h).cols();
        if d != self.width() {
            return Err(dim_err(format!("adapter {} expects width {}, got {d}", self.tag, self.width())));
        }
        let wd = tape.param(&self.w_down);
        let bd = tape.param(&self.b_down);
        let wu = tape.param(&self.w_up);
        let bu = tape.param(&self.b_up);
        let z = tape.matmul(h, wd)?;
        let z = tape.add_row(z, bd)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, wu)?;
        let z = tape.add_row(z, bu)?;
        tape.add(h, z)
    }
}

impl ParamSet for BottleneckAdapter {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in [&self.w_down, &self.b_down, &self.w_up, &self.b_up] {
            f(p)
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in [&mut self.w_down, &mut self.b_down, &mut self.w_up, &mut self.b_up] {
            f(p)
        }
    }
}

/// Applies one adapter to `h[len×d]` outside of any training graph.
pub fn adapter_forward(adapter: &BottleneckAdapter, h: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let y = adapter.forward_on_tape(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum TaskSlot {
    #[default]
    Empty,
    Single(BottleneckAdapter),
    Fusion(FusionLayer),
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LayerAdapters {
    pub language: Option<BottleneckAdapter>,
    pub task: TaskSlot,
}

/// Per-layer adapter configuration attached to a backbone.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdapterStack {
    pub layers: Vec<LayerAdapters>,
}

/// What a forward pass through one layer slot produced.
pub struct SlotOutput {
    pub hidden: Var,
    /// `[len × N]` fusion weights when the slot holds a fusion block.
    pub fusion_weights: Option<Var>,
}

impl AdapterStack {
    pub fn empty(n_layers: usize) -> Self {
        AdapterStack { layers: vec![LayerAdapters::default(); n_layers] }
    }

    /// One fresh task adapter per layer.
    pub fn task(n_layers: usize, lang: &str, d: usize, b: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut s = Self::empty(n_layers);
        for (l, slot) in s.layers.iter_mut().enumerate() {
            slot.task = TaskSlot::Single(BottleneckAdapter::new(l, AdapterKind::Task, lang, d, b, rng)?);
        }
        Ok(s)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_language_slot(&self) -> bool {
        self.layers.iter().any(|l| l.language.is_some())
    }

    /// Language currently installed in the LA slot.
    pub fn active_language(&self) -> Option<&str> {
        self.layers.iter().find_map(|l| l.language.as_ref().map(|a| a.lang()))
    }

    pub fn is_fusion(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.task, TaskSlot::Fusion(_)))
    }

    /// Installs a copy of `la` in every layer's language slot, frozen.
    pub fn install_language(&mut self, la: &LanguageAdapter) -> Result<()> {
        if la.layers.len() != self.layers.len() {
            return Err(Error::Compatibility(format!(
                "language adapter has {} layers, stack has {}",
                la.layers.len(),
                self.layers.len()
            )));
        }
        for (slot, a) in self.layers.iter_mut().zip(&la.layers) {
            let mut a = a.clone();
            a.set_trainable(false);
            slot.language = Some(a);
        }
        Ok(())
    }

    /// Runs layer `l`'s slot; `la_override` replaces the installed language
    /// adapter for this pass only.
    pub fn apply_layer(
        &self,
        tape: &mut Tape,
        l: usize,
        h: Var,
        la_override: Option<&LanguageAdapter>,
    ) -> Result<SlotOutput> {
        let slot = &self.layers[l];
        let la = match la_override {
            Some(set) => Some(&set.layers[l]),
            None => slot.language.as_ref(),
        };
        let h = match la {
            Some(a) => a.forward_on_tape(tape, h)?,
            None => h,
        };
        match &slot.task {
            TaskSlot::Empty => Ok(SlotOutput { hidden: h, fusion_weights: None }),
            TaskSlot::Single(a) => Ok(SlotOutput { hidden: a.forward_on_tape(tape, h)?, fusion_weights: None }),
            TaskSlot::Fusion(f) => {
                let (out, w) = fusion_forward_on_tape(f, tape, h)?;
                Ok(SlotOutput { hidden: out, fusion_weights: Some(w) })
            }
        }
    }

    /// Extracts the task adapters of a single-TA stack as a reusable set.
    pub fn task_adapter_set(&self) -> Option<Vec<BottleneckAdapter>> {
        self.layers
            .iter()
            .map(|l| match &l.task {
                TaskSlot::Single(a) => Some(a.clone()),
                _ => None,
            })
            .collect()
    }
}

impl ParamSet for LayerAdapters {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        if let Some(a) = &self.language {
            a.visit(f);
        }
        match &self.task {
            TaskSlot::Empty => {}
            TaskSlot::Single(a) => a.visit(f),
            TaskSlot::Fusion(b) => b.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        if let Some(a) = &mut self.language {
            a.visit_mut(f);
        }
        match &mut self.task {
            TaskSlot::Empty => {}
            TaskSlot::Single(a) => a.visit_mut(f),
            TaskSlot::Fusion(b) => b.visit_mut(f),
        }
    }
}

impl ParamSet for AdapterStack {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.layers.iter().for_each(|l| l.visit(f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f))
    }
}

/// One language adapter per layer, trained by masked language modeling.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageAdapter {
    pub lang: String,
    pub layers: Vec<BottleneckAdapter>,
}

impl LanguageAdapter {
    pub fn new(lang: &str, n_layers: usize, d: usize, b: usize, rng: &mut impl Rng) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|l| BottleneckAdapter::new(l, AdapterKind::Language, lang, d, b, rng))
            .collect::<Result<_>>()?;
        Ok(LanguageAdapter { lang: lang.to_string(), layers })
    }
}

impl ParamSet for LanguageAdapter {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.layers.iter().for_each(|a| a.visit(f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.layers.iter_mut().for_each(|a| a.visit_mut(f))
    }
}

/// Registry of trained language adapters keyed by language code.
#[derive(Clone, Debug, Default)]
pub struct LanguageAdapterBank {
    pub adapters: BTreeMap<String, LanguageAdapter>,
}

impl LanguageAdapterBank {
    pub fn insert(&mut self, la: LanguageAdapter) {
        self.adapters.insert(la.lang.clone(), la);
    }

    pub fn get(&self, lang: &str) -> Option<&LanguageAdapter> {
        self.adapters.get(lang)
    }

    /// The adapter for `lang`, or the fallback language's adapter. The flag
    /// is `true` when the fallback was used.
    pub fn resolve(&self, lang: &str, fallback: &str) -> Result<(&LanguageAdapter, bool)> {
        if let Some(a) = self.adapters.get(lang) {
            return Ok((a, false));
        }
        self.adapters.get(fallback).map(|a| (a, true)).ok_or_else(|| {
            Error::Config(format!("no language adapter for {lang} and fallback {fallback} is not registered"))
        })
    }
}

/// Result of replacing the language adapter of a stack.
#[derive(Clone, Debug)]
pub struct LanguageSwap {
    pub stack: AdapterStack,
    pub installed: String,
    pub fallback: bool,
}

/// Replaces every layer's language adapter with `target`'s (or the fallback
/// language's when `target` has none). All other parameters are untouched.
pub fn swap_language_adapter(
    stack: &AdapterStack,
    bank: &LanguageAdapterBank,
    target: &str,
    fallback: &str,
) -> Result<LanguageSwap> {
    if !stack.has_language_slot() {
        return Err(Error::Config("stack was built without a language adapter slot".into()));
    }
    let (la, used_fallback) = bank.resolve(target, fallback)?;
    let mut out = stack.clone();
    out.install_language(la)?;
    Ok(LanguageSwap { stack: out, installed: la.lang.clone(), fallback: used_fallback })
}

/// Trainable scalar counts partitioned by parameter-name group.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub backbone: usize,
    pub task_adapters: usize,
    pub language_adapters: usize,
    pub fusion: usize,
    pub head: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.backbone + self.task_adapters + self.language_adapters + self.fusion + self.head
    }
}

/// Group of a parameter name: `backbone`, `ta`, `la`, `fusion` or `head`.
pub fn param_group(name: &str) -> &'static str {
    if name.starts_with("head.") {
        "head"
    } else if name.starts_with("backbone.") {
        "backbone"
    } else if name.contains(".fusion.") {
        "fusion"
    } else if name.contains(".la.") {
        "la"
    } else if name.contains(".ta.") {
        "ta"
    } else {
        "other"
    }
}

/// Counts scalars with `trainable = true`, grouped by name prefix.
pub fn count_trainable_params<P: ParamSet + ?Sized>(model: &P) -> ParamBreakdown {
    let mut b = ParamBreakdown::default();
    model.visit(&mut |p| {
        if !p.trainable {
            return;
        }
        let n = p.value.len();
        match param_group(&p.name) {
            "backbone" => b.backbone += n,
            "ta" => b.task_adapters += n,
            "la" => b.language_adapters += n,
            "fusion" => b.fusion += n,
            "head" => b.head += n,
            _ => {}
        }
    });
    b
}

/// Closed-form scalar count of one bottleneck adapter: `2db + b + d`.
pub fn adapter_param_formula(d: usize, b: usize) -> usize {
    2 * d * b + b + d
}
