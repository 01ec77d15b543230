use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BottleneckAdapter;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{uniform, ParamSet, Parameter, Tape, Tensor, Var};

/// Attention over the outputs of several frozen task adapters in one layer.
///
/// For each token, `q = h·W_q`; each member produces `o_n = TA_n(h)` with key
/// `o_n·W_k` and value `o_n·W_v`. The weights are a softmax over `⟨q, k_n⟩`
/// and the output is `h + Σ_n s_n·v_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionLayer {
    pub w_q: Parameter,
    pub w_k: Parameter,
    pub w_v: Parameter,
    pub members: Vec<BottleneckAdapter>,
}

/// Fusion layers for every encoder layer of one model.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FusionBlock {
    pub layers: Vec<FusionLayer>,
}

impl FusionLayer {
    /// Query and key start small and random, the value projection starts at
    /// zero so the layer initially returns `h` unchanged.
    pub fn new(layer: usize, members: Vec<BottleneckAdapter>, rng: &mut impl Rng) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::Config("fusion needs at least one task adapter".into()))?;
        let d = first.width();
        if let Some(bad) = members.iter().find(|m| m.width() != d) {
            return Err(Error::Compatibility(format!(
                "fusion member {} has width {}, expected {d}",
                bad.tag,
                bad.width()
            )));
        }
        let mut members = members;
        for m in &mut members {
            m.relabel(layer);
            m.set_trainable(false);
        }
        let base = format!("adapters.layer{layer}.fusion");
        let scale = 0.1 / (d as f64).sqrt();
        Ok(FusionLayer {
            w_q: Parameter::new(format!("{base}.w_q"), uniform(rng, &[d, d], scale), true),
            w_k: Parameter::new(format!("{base}.w_k"), uniform(rng, &[d, d], scale), true),
            w_v: Parameter::new(format!("{base}.w_v"), Tensor::zeros(&[d, d]), true),
            members,
        })
    }

    pub fn width(&self) -> usize {
        self.w_q.value.shape()[0]
    }

    pub fn tags(&self) -> Vec<String> {
        self.members.iter().map(|m| m.tag.clone()).collect()
    }

    /// Trainable parameters only: the three projections.
    pub fn projections(&self) -> [&Parameter; 3] {
        [&self.w_q, &self.w_k, &self.w_v]
    }
}

impl ParamSet for FusionLayer {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        for p in [&self.w_q, &self.w_k, &self.w_v] {
            f(p);
        }
        self.members.iter().for_each(|m| m.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for p in [&mut self.w_q, &mut self.w_k, &mut self.w_v] {
            f(p);
        }
        self.members.iter_mut().for_each(|m| m.visit_mut(f));
    }
}

impl ParamSet for FusionBlock {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.layers.iter().for_each(|l| l.visit(f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f))
    }
}

/// Returns the fused hidden state and the `[len × N]` softmax weights.
pub fn fusion_forward_on_tape(layer: &FusionLayer, tape: &mut Tape, h: Var) -> Result<(Var, Var)> {
    if layer.members.is_empty() {
        return Err(Error::Config("fusion needs at least one task adapter".into()));
    }
    let d = tape.value(h).cols();
    if d != layer.width() {
        return Err(dim_err(format!("fusion expects width {}, got {d}", layer.width())));
    }
    let wq = tape.param(&layer.w_q);
    let wk = tape.param(&layer.w_k);
    let wv = tape.param(&layer.w_v);
    let q = tape.matmul(h, wq)?;
    let mut scores = Vec::with_capacity(layer.members.len());
    let mut values = Vec::with_capacity(layer.members.len());
    for m in &layer.members {
        let o = m.forward_on_tape(tape, h)?;
        let k = tape.matmul(o, wk)?;
        values.push(tape.matmul(o, wv)?);
        scores.push(tape.row_dot(q, k)?);
    }
    let scores = tape.concat_cols(&scores)?;
    let weights = tape.softmax_rows(scores);
    let mut out = h;
    for (n, v) in values.into_iter().enumerate() {
        let s = tape.slice_cols(weights, n, n + 1)?;
        let sv = tape.mul_col(v, s)?;
        out = tape.add(out, sv)?;
    }
    Ok((out, weights))
}

/// Per-token fusion weights for one layer, plus where they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionAttentionRecord {
    pub layer: usize,
    pub adapter_tags: Vec<String>,
    /// `[len × N]`, one softmax vector per token.
    pub weights: Vec<Vec<f64>>,
    pub dataset: String,
    pub language: String,
    pub model_id: String,
}

impl FusionAttentionRecord {
    pub fn from_tensor(layer: usize, tags: Vec<String>, w: &Tensor) -> Self {
        FusionAttentionRecord {
            layer,
            adapter_tags: tags,
            weights: (0..w.rows()).map(|i| w.row(i).to_vec()).collect(),
            dataset: String::new(),
            language: String::new(),
            model_id: String::new(),
        }
    }
}

/// Applies one fusion layer to `h[len×d]`.
pub fn fusion_forward(layer: &FusionLayer, h: &Tensor) -> Result<(Tensor, FusionAttentionRecord)> {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let (out, w) = fusion_forward_on_tape(layer, &mut tape, x)?;
    let rec = FusionAttentionRecord::from_tensor(layer_index(layer), layer.tags(), tape.value(w));
    Ok((tape.value(out).clone(), rec))
}

fn layer_index(layer: &FusionLayer) -> usize {
    layer
        .w_q
        .name
        .strip_prefix("adapters.layer")
        .and_then(|s| s.split('.').next())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}
