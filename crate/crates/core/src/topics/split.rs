use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{assign_topics, fit_topic_model, TauRule, TopicAssignment, TopicModel, OUTLIER};
use crate::datakit::{tsv_row, Corpus, TSV_HEADER};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStage {
    Global,
    Local,
}

impl fmt::Display for SplitStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitStage::Global => "global",
            SplitStage::Local => "local",
        })
    }
}

/// A test example placed in the global or local set, with the topic that
/// put it there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMember {
    pub id: String,
    pub lang: String,
    /// Topic of the first model (global) or of the refit model (local).
    pub topic: i64,
    pub stage: SplitStage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicalSplit {
    pub global_topics: Vec<i64>,
    /// Refit topic → the only language whose test set contains it.
    pub local_topics: BTreeMap<i64, String>,
    pub global: Vec<SplitMember>,
    pub local: Vec<SplitMember>,
    pub local_model: Option<TopicModel>,
}

impl TopicalSplit {
    pub fn global_ids(&self) -> BTreeSet<&str> {
        self.global.iter().map(|m| m.id.as_str()).collect()
    }

    pub fn local_ids(&self) -> BTreeSet<&str> {
        self.local.iter().map(|m| m.id.as_str()).collect()
    }
}

/// Options of the outlier refit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalRefit {
    pub k: usize,
    pub tau: TauRule,
    /// A topic occurs in a dataset when at least this many of its samples
    /// are assigned to it.
    pub min_support: usize,
    pub seed: u64,
}

fn counts<'a>(items: impl Iterator<Item = &'a TopicAssignment>) -> HashMap<i64, usize> {
    let mut m = HashMap::new();
    for a in items.filter(|a| a.topic != OUTLIER) {
        *m.entry(a.topic).or_insert(0) += 1;
    }
    m
}

/// Global set: test samples whose topic occurs in every training language.
/// Local set: the outliers are re-clustered and a sample is kept when its
/// new topic occurs in exactly one language's test set.
///
/// `train` holds assignments of each world-language training set; `test`
/// holds each language's test assignments and embeddings.
pub fn build_global_local_sets(
    train: &BTreeMap<String, Vec<TopicAssignment>>,
    test: &BTreeMap<String, (Vec<TopicAssignment>, Tensor)>,
    refit: &LocalRefit,
) -> Result<TopicalSplit> {
    if train.is_empty() {
        return Err(Error::Input("no training-language assignments".into()));
    }
    let support = refit.min_support.max(1);
    let per_lang: Vec<HashMap<i64, usize>> = train.values().map(|a| counts(a.iter())).collect();
    let mut global_topics: Vec<i64> = per_lang[0]
        .iter()
        .filter(|(t, _)| per_lang.iter().all(|m| m.get(t).copied().unwrap_or(0) >= support))
        .map(|(&t, _)| t)
        .collect();
    global_topics.sort_unstable();

    let mut global = Vec::new();
    let mut out_ids: Vec<(String, String)> = Vec::new();
    let mut out_rows: Vec<Vec<f64>> = Vec::new();
    for (lang, (assign, emb)) in test {
        if assign.len() != emb.rows() {
            return Err(Error::Input(format!("{lang}: {} assignments for {} embeddings", assign.len(), emb.rows())));
        }
        for (i, a) in assign.iter().enumerate() {
            if a.topic == OUTLIER {
                out_ids.push((a.id.clone(), lang.clone()));
                out_rows.push(emb.row(i).to_vec());
            } else if global_topics.binary_search(&a.topic).is_ok() {
                global.push(SplitMember {
                    id: a.id.clone(),
                    lang: lang.clone(),
                    topic: a.topic,
                    stage: SplitStage::Global,
                });
            }
        }
    }

    let mut local = Vec::new();
    let mut local_topics = BTreeMap::new();
    let mut local_model = None;
    if !out_rows.is_empty() {
        let emb = Tensor::from_rows(&out_rows)?;
        let model = fit_topic_model(&emb, refit.k.min(out_rows.len()), refit.tau, refit.seed)?;
        let ids: Vec<String> = out_ids.iter().map(|(id, _)| id.clone()).collect();
        let assign = assign_topics(&model, &ids, &emb)?;
        let mut by_topic: BTreeMap<i64, BTreeMap<&str, usize>> = BTreeMap::new();
        for (a, (_, lang)) in assign.iter().zip(&out_ids) {
            if a.topic != OUTLIER {
                *by_topic.entry(a.topic).or_default().entry(lang.as_str()).or_insert(0) += 1;
            }
        }
        for (t, langs) in &by_topic {
            let present: Vec<&str> = langs.iter().filter(|(_, &c)| c >= support).map(|(l, _)| *l).collect();
            if let [only] = present.as_slice() {
                local_topics.insert(*t, only.to_string());
            }
        }
        for (a, (id, lang)) in assign.iter().zip(&out_ids) {
            if local_topics.get(&a.topic).is_some_and(|l| l == lang) {
                local.push(SplitMember {
                    id: id.clone(),
                    lang: lang.clone(),
                    topic: a.topic,
                    stage: SplitStage::Local,
                });
            }
        }
        local_model = Some(model);
    }
    let split = TopicalSplit { global_topics, local_topics, global, local, local_model };
    if !split.global_ids().is_disjoint(&split.local_ids()) {
        return Err(Error::Contract("global and local evaluation sets overlap".into()));
    }
    Ok(split)
}

/// Corpus tsv of both sets with extra `topic_id` and `scope` columns.
pub fn export_topical_tsv(path: &Path, split: &TopicalSplit, corpora: &BTreeMap<String, Corpus>) -> Result<()> {
    let mut out = format!("{TSV_HEADER}\ttopic_id\tscope\n");
    for m in split.global.iter().chain(&split.local) {
        let corpus = corpora.get(&m.lang).ok_or_else(|| Error::Input(format!("no test corpus for {}", m.lang)))?;
        let ex = corpus
            .examples
            .iter()
            .find(|e| e.id == m.id)
            .ok_or_else(|| Error::Input(format!("example {} missing from the {} corpus", m.id, m.lang)))?;
        out.push_str(&format!("{}\t{}\t{}\n", tsv_row(ex)?, m.topic, m.stage));
    }
    std::fs::write(path, out)?;
    Ok(())
}
