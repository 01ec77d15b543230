use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::LanguageAdapter;
use crate::datakit::PAD_ID;
use crate::encoder::{effective_len, Classifier, CW_CLASS};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

/// Completeness residual expected at the default 256 steps.
pub const RESIDUAL_TOLERANCE: f64 = 1e-3;

/// Output of the generic path integral.
#[derive(Clone, Debug, PartialEq)]
pub struct IgResult {
    pub attributions: Vec<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
    /// `|Σ attributions − (F(x) − F(baseline))|`.
    pub residual: f64,
}

/// Integrated gradients of `f` along the straight line from `baseline` to
/// `x`, midpoint Riemann sum with `steps` points. `f` returns the value and
/// the gradient at its argument.
pub fn integrated_gradients_fn(
    x: &[f64],
    baseline: &[f64],
    steps: usize,
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<IgResult> {
    if steps == 0 {
        return Err(Error::Config("integrated gradients needs at least one step".into()));
    }
    if x.len() != baseline.len() {
        return Err(Error::Dimension(format!("input has {} values, baseline {}", x.len(), baseline.len())));
    }
    let delta: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mut avg = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        for ((p, b), d) in point.iter_mut().zip(baseline).zip(&delta) {
            *p = b + alpha * d;
        }
        let (_, g) = f(&point)?;
        if g.len() != x.len() {
            return Err(Error::Dimension(format!("gradient has {} values, expected {}", g.len(), x.len())));
        }
        for (a, gi) in avg.iter_mut().zip(&g) {
            *a += gi;
        }
    }
    let attributions: Vec<f64> = avg.iter().zip(&delta).map(|(a, d)| a / steps as f64 * d).collect();
    let (f_input, _) = f(x)?;
    let (f_baseline, _) = f(baseline)?;
    let residual = (attributions.iter().sum::<f64>() - (f_input - f_baseline)).abs();
    Ok(IgResult { attributions, f_input, f_baseline, residual })
}

/// Per-token attribution of the check-worthy probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub id: String,
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
    pub residual: f64,
}

/// Integrated gradients over token embeddings. The baseline puts the PAD
/// embedding at every position and keeps the input's attention mask and
/// position embeddings; trailing padding is dropped first.
pub fn integrated_gradients(
    model: &Classifier,
    id: &str,
    ids: &[usize],
    steps: usize,
    la: Option<&LanguageAdapter>,
) -> Result<Attribution> {
    let ids = &ids[..effective_len(ids)];
    let bb = &model.backbone;
    let d = bb.d_model();
    let embed = |toks: &[usize]| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = bb.embed_tokens(&mut tape, toks)?;
        Ok(tape.value(v).data().to_vec())
    };
    let x = embed(ids)?;
    let base = embed(&vec![PAD_ID; ids.len()])?;
    let f = |e: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let tok = tape.input(Tensor::new(vec![ids.len(), d], e.to_vec())?);
        let fp = bb.forward_from_embeddings(&mut tape, tok, ids, model.stack.as_ref(), la)?;
        let logits = bb.head_logits(&mut tape, fp.hidden)?;
        let p = tape.softmax_rows(logits);
        let cw = tape.slice_cols(p, CW_CLASS, CW_CLASS + 1)?;
        let value = tape.scalar(cw);
        let g = tape.backward(cw)?;
        let grad = g.wrt(tok).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; e.len()]);
        Ok((value, grad))
    };
    let r = integrated_gradients_fn(&x, &base, steps, f)?;
    let scores = r.attributions.chunks(d).map(|c| c.iter().sum()).collect();
    Ok(Attribution {
        id: id.to_string(),
        tokens: Vec::new(),
        token_ids: ids.to_vec(),
        scores,
        f_input: r.f_input,
        f_baseline: r.f_baseline,
        residual: r.residual,
    })
}

/// One JSON object per line.
pub fn write_attributions_jsonl(path: &Path, items: &[Attribution]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for a in items {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Backbone, EncoderConfig};

    #[test]
    fn linear_function_is_exact() {
        let w = [0.3, -1.7, 2.25, 0.0, 5.5];
        let x = [1.0, 2.0, -0.5, 4.0, 0.1];
        let b = [0.2, -1.0, 0.0, 1.0, 0.0];
        let f = |v: &[f64]| Ok((v.iter().zip(&w).map(|(a, c)| a * c).sum(), w.to_vec()));
        let r = integrated_gradients_fn(&x, &b, 256, f).unwrap();
        for i in 0..5 {
            assert!((r.attributions[i] - w[i] * (x[i] - b[i])).abs() < 1e-10);
        }
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn zero_steps_rejected() {
        let f = |_: &[f64]| Ok((0.0, vec![0.0]));
        assert!(matches!(integrated_gradients_fn(&[1.0], &[0.0], 0, f), Err(Error::Config(_))));
    }

    #[test]
    fn model_completeness() {
        let cfg = EncoderConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 4,
            d_ffn: 32,
            vocab_size: 40,
            max_len: 16,
            ..Default::default()
        };
        for seed in 0..3 {
            let bb = Backbone::new(cfg.clone(), seed).unwrap();
            let m = Classifier::new(bb, None).unwrap();
            let a = integrated_gradients(&m, "x", &[1, 5, 9, 22, 31, 0, 0], 256, None).unwrap();
            assert_eq!(a.scores.len(), 5);
            assert!(a.residual <= 1e-3, "residual {}", a.residual);
        }
    }
}
