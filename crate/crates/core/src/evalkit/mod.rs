//! Metrics, per-language evaluation, fusion-attention reports, attributions
//! and size reports.

mod attribution;
mod metrics;
mod reports;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attribution::{
    integrated_gradients, integrated_gradients_fn, write_attributions_jsonl, Attribution, RESIDUAL_TOLERANCE,
};
pub use metrics::{average_precision, f1_binary, fleiss_kappa, map_over_queries, F1Scores, Query};
pub use reports::{
    entity_sliced_scores, fusion_attention_report, kappa_report, param_size_report, EntityRow, FusionReport,
    KappaReport, SizeEntry, SizeRow,
};

use crate::datakit::{save_predictions, Prediction};
use crate::error::{Error, Result};
use crate::training::{EncodedCorpus, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Map,
    F1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Map => "map",
            Metric::F1 => "f1",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "map" => Ok(Metric::Map),
            "f1" => Ok(Metric::F1),
            _ => Err(Error::Config(format!("unknown metric {s:?} (expected map or f1)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    All,
    Global,
    Local,
    ZeroShot,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::All => "all",
            Scope::Global => "global",
            Scope::Local => "local",
            Scope::ZeroShot => "zero-shot",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scope::All),
            "global" => Ok(Scope::Global),
            "local" => Ok(Scope::Local),
            "zero-shot" | "zeroshot" => Ok(Scope::ZeroShot),
            _ => Err(Error::Config(format!("unknown scope {s:?}"))),
        }
    }
}

/// Per-language queries: each language's examples form one ranked list.
pub fn language_queries(scores: &[f64], data: &EncodedCorpus) -> Vec<Query> {
    let mut by: BTreeMap<&str, Query> = BTreeMap::new();
    for i in 0..data.len() {
        let q = by.entry(data.langs[i].as_str()).or_default();
        q.ids.push(data.ids[i].clone());
        q.scores.push(scores[i]);
        q.labels.push(data.labels[i]);
    }
    by.into_values().collect()
}

pub fn threshold_preds(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| (s >= threshold) as u8).collect()
}

/// Model-selection metric on a development set; undefined MAP counts as 0.
pub fn dev_metric(scores: &[f64], data: &EncodedCorpus, metric: Metric, threshold: f64) -> Result<f64> {
    match metric {
        Metric::Map => Ok(map_over_queries(&language_queries(scores, data))?.unwrap_or(0.0)),
        Metric::F1 => Ok(f1_binary(&threshold_preds(scores, threshold), &data.labels)?.f1),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub language: String,
    pub metric: String,
    /// `None` when undefined or when the corpus is missing.
    pub value: Option<f64>,
    pub n: usize,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub scope: Scope,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn value(&self, language: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.language == language && r.metric == metric).and_then(|r| r.value)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("model\tscope\tlanguage\tmetric\tvalue\tn\tnote\n");
        for r in &self.rows {
            let v = r.value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into());
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                self.model_id, self.scope, r.language, r.metric, v, r.n, r.note
            ));
        }
        s
    }

    pub fn write(&self, tsv: &std::path::Path, json: Option<&std::path::Path>) -> Result<()> {
        std::fs::write(tsv, self.to_tsv())?;
        if let Some(j) = json {
            std::fs::write(j, serde_json::to_vec_pretty(self)?)?;
        }
        Ok(())
    }
}

/// Scored examples of one evaluation run.
#[derive(Clone, Debug, Default)]
pub struct Scored {
    pub predictions: Vec<Prediction>,
    /// Language → per-example scores in corpus order.
    pub scores: BTreeMap<String, Vec<f64>>,
}

impl Scored {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_predictions(path, &self.predictions)
    }

    pub fn preds(&self, lang: &str, threshold: f64) -> Option<Vec<u8>> {
        self.scores.get(lang).map(|s| threshold_preds(s, threshold))
    }
}

/// Scores each language's corpus after swapping in that language's adapter
/// (or the fallback) and emits one row per (language, metric).
pub fn evaluate_model(
    model: &TrainedModel,
    corpora: &[(String, Option<&EncodedCorpus>)],
    scope: Scope,
    metric: Metric,
    threshold: f64,
) -> Result<(EvalReport, Scored)> {
    let mut rows = Vec::new();
    let mut scored = Scored::default();
    for (lang, data) in corpora {
        let Some(data) = data else {
            rows.push(EvalRow {
                language: lang.clone(),
                metric: metric.to_string(),
                value: None,
                n: 0,
                note: "warning: no corpus for this language; skipped".into(),
            });
            continue;
        };
        let prepared = model.for_language(lang)?;
        let scores = data.tokens.iter().map(|ids| prepared.score(ids)).collect::<Result<Vec<f64>>>()?;
        let mut note = match (&prepared.installed_la, prepared.fallback_used) {
            (Some(l), true) => format!("la={l} fallback=true"),
            (Some(l), false) => format!("la={l}"),
            _ => String::new(),
        };
        let preds = threshold_preds(&scores, threshold);
        match metric {
            Metric::Map => {
                let ap = map_over_queries(&language_queries(&scores, data))?;
                if ap.is_none() {
                    note.push_str(" ap=undefined(no positives)");
                }
                rows.push(EvalRow { language: lang.clone(), metric: "map".into(), value: ap, n: data.len(), note });
            }
            Metric::F1 => {
                let f = f1_binary(&preds, &data.labels)?;
                for (m, v) in [("f1", f.f1), ("precision", f.precision), ("recall", f.recall)] {
                    rows.push(EvalRow {
                        language: lang.clone(),
                        metric: m.into(),
                        value: Some(v),
                        n: data.len(),
                        note: note.clone(),
                    });
                }
            }
        }
        for i in 0..data.len() {
            scored.predictions.push(Prediction {
                id: data.ids[i].clone(),
                lang: data.langs[i].clone(),
                score: scores[i],
                pred_label: preds[i],
            });
        }
        scored.scores.insert(lang.clone(), scores);
    }
    Ok((EvalReport { model_id: model.id(), scope, rows }, scored))
}

/// F1 of always predicting the majority class of `labels`.
pub fn majority_baseline_f1(labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let majority = (2 * pos > labels.len()) as u8;
    f1_binary(&vec![majority; labels.len()], labels).map(|f| f.f1).unwrap_or(0.0)
}
