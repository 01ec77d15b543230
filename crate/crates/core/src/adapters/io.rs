//! Adapter files: an adapter stack plus any extra parameters (usually the
//! classifier head) in the shared parameter container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterKind, AdapterStack, BottleneckAdapter, FusionLayer, LanguageAdapter, LayerAdapters, TaskSlot};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Parameter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotLayout {
    pub language: Option<String>,
    /// Empty for no task adapter, one tag for a single adapter, several for fusion.
    pub task: Vec<String>,
    pub fusion: bool,
}

/// Header stored alongside the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterHeader {
    pub d: usize,
    pub b: usize,
    pub n_layers: usize,
    /// `task`, `language` or `fusion`.
    pub kind: String,
    pub tag: String,
    pub layout: Vec<SlotLayout>,
}

/// Contents of an adapter file.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterFile {
    pub header: AdapterHeader,
    pub stack: AdapterStack,
    pub extra: Vec<Parameter>,
}

fn first_adapter(stack: &AdapterStack) -> Option<&BottleneckAdapter> {
    stack.layers.iter().find_map(|l| {
        l.language.as_ref().or(match &l.task {
            TaskSlot::Single(a) => Some(a),
            TaskSlot::Fusion(f) => f.members.first(),
            TaskSlot::Empty => None,
        })
    })
}

pub fn header_for(stack: &AdapterStack, tag: &str) -> Result<AdapterHeader> {
    let a = first_adapter(stack).ok_or_else(|| Error::Input("adapter stack is empty".into()))?;
    let kind = if stack.is_fusion() {
        "fusion"
    } else if stack.layers.iter().all(|l| matches!(l.task, TaskSlot::Empty)) {
        "language"
    } else {
        "task"
    };
    let layout = stack
        .layers
        .iter()
        .map(|l| SlotLayout {
            language: l.language.as_ref().map(|a| a.tag.clone()),
            task: match &l.task {
                TaskSlot::Empty => vec![],
                TaskSlot::Single(a) => vec![a.tag.clone()],
                TaskSlot::Fusion(f) => f.tags(),
            },
            fusion: matches!(l.task, TaskSlot::Fusion(_)),
        })
        .collect();
    Ok(AdapterHeader {
        d: a.width(),
        b: a.bottleneck(),
        n_layers: stack.n_layers(),
        kind: kind.into(),
        tag: tag.into(),
        layout,
    })
}

/// Writes `stack` and `extra` to `path`; returns the file size in bytes.
pub fn save_adapters(path: &Path, stack: &AdapterStack, tag: &str, extra: &[&Parameter]) -> Result<u64> {
    let header = header_for(stack, tag)?;
    let mut owned: Vec<Parameter> = Vec::new();
    stack.visit(&mut |p| owned.push(p.clone()));
    let mut params: Vec<&Parameter> = owned.iter().collect();
    params.extend_from_slice(extra);
    let meta = serde_json::json!({ "format": "adapters", "adapter": header });
    checkpoint::write(path, &meta, &params)
}

pub fn load_adapters(path: &Path) -> Result<AdapterFile> {
    let (meta, mut params) = checkpoint::read(path)?;
    if meta["format"] != "adapters" {
        return Err(Error::Format(format!("{} is not an adapter file", path.display())));
    }
    let header: AdapterHeader = serde_json::from_value(meta["adapter"].clone())?;
    let mut stack = AdapterStack::empty(header.n_layers);
    for (l, (slot, lay)) in stack.layers.iter_mut().zip(&header.layout).enumerate() {
        let mut out = LayerAdapters::default();
        if let Some(tag) = &lay.language {
            out.language = Some(take_adapter(&mut params, l, tag)?);
        }
        out.task = if lay.fusion {
            let base = format!("adapters.layer{l}.fusion");
            let members = lay.task.iter().map(|t| take_adapter(&mut params, l, t)).collect::<Result<Vec<_>>>()?;
            TaskSlot::Fusion(FusionLayer {
                w_q: checkpoint::take(&mut params, &format!("{base}.w_q"))?,
                w_k: checkpoint::take(&mut params, &format!("{base}.w_k"))?,
                w_v: checkpoint::take(&mut params, &format!("{base}.w_v"))?,
                members,
            })
        } else if let Some(t) = lay.task.first() {
            TaskSlot::Single(take_adapter(&mut params, l, t)?)
        } else {
            TaskSlot::Empty
        };
        *slot = out;
    }
    Ok(AdapterFile { header, stack, extra: params })
}

fn take_adapter(params: &mut Vec<Parameter>, layer: usize, tag: &str) -> Result<BottleneckAdapter> {
    let kind = match tag.split_once('.').map(|(k, _)| k) {
        Some("ta") => AdapterKind::Task,
        Some("la") => AdapterKind::Language,
        _ => return Err(Error::Format(format!("unknown adapter tag {tag}"))),
    };
    let base = format!("adapters.layer{layer}.{tag}");
    Ok(BottleneckAdapter {
        kind,
        tag: tag.to_string(),
        w_down: checkpoint::take(params, &format!("{base}.w_down"))?,
        b_down: checkpoint::take(params, &format!("{base}.b_down"))?,
        w_up: checkpoint::take(params, &format!("{base}.w_up"))?,
        b_up: checkpoint::take(params, &format!("{base}.b_up"))?,
    })
}

/// Writes a language adapter as a stack whose only slots are language slots.
pub fn save_language_adapter(path: &Path, la: &LanguageAdapter) -> Result<u64> {
    let mut stack = AdapterStack::empty(la.layers.len());
    stack.install_language(la)?;
    save_adapters(path, &stack, &format!("la.{}", la.lang), &[])
}

pub fn load_language_adapter(path: &Path) -> Result<LanguageAdapter> {
    let file = load_adapters(path)?;
    if file.header.kind != "language" {
        return Err(Error::Format(format!(
            "{} holds a {} adapter, not a language adapter",
            path.display(),
            file.header.kind
        )));
    }
    let layers: Vec<BottleneckAdapter> = file.stack.layers.into_iter().filter_map(|l| l.language).collect();
    let lang = layers
        .first()
        .map(|a| a.lang().to_string())
        .ok_or_else(|| Error::Format("language adapter file has no layers".into()))?;
    Ok(LanguageAdapter { lang, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits<P: ParamSet>(p: &P) -> Vec<(String, Vec<u64>, bool)> {
        let mut v = Vec::new();
        p.visit(&mut |q| v.push((q.name.clone(), q.value.data().iter().map(|x| x.to_bits()).collect(), q.trainable)));
        v
    }

    #[test]
    fn fusion_stack_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 8;
        let mut stack = AdapterStack::empty(2);
        let la = LanguageAdapter::new("en", 2, d, 2, &mut rng).unwrap();
        stack.install_language(&la).unwrap();
        for l in 0..2 {
            let members = ["en", "ar"]
                .iter()
                .map(|g| BottleneckAdapter::new(l, AdapterKind::Task, g, d, 2, &mut rng).unwrap())
                .collect();
            stack.layers[l].task = TaskSlot::Fusion(FusionLayer::new(l, members, &mut rng).unwrap());
        }
        let head = Parameter::new("head.w", Tensor::filled(&[d, 2], 0.25), true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("af.bin");
        save_adapters(&path, &stack, "wl-af", &[&head]).unwrap();
        let back = load_adapters(&path).unwrap();
        assert_eq!(back.header.kind, "fusion");
        assert_eq!(back.header.d, d);
        assert_eq!(bits(&back.stack), bits(&stack));
        assert_eq!(back.extra, vec![head]);
    }

    #[test]
    fn language_adapter_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut la = LanguageAdapter::new("tr", 3, 6, 3, &mut rng).unwrap();
        la.set_trainable(false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("la.bin");
        save_language_adapter(&path, &la).unwrap();
        let back = load_language_adapter(&path).unwrap();
        assert_eq!(back.lang, "tr");
        assert_eq!(bits(&back), bits(&la));
    }
}
