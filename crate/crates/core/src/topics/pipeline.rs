use std::collections::BTreeMap;

use super::{
    assign_topics, build_global_local_sets, build_relation_graph, embed_examples, fit_topic_model, LocalRefit,
    RelationGraph, TauRule, TopicAssignment, TopicModel, TopicalSplit,
};
use crate::encoder::Backbone;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Example ids with their token sequences.
pub type TokenSet<'a> = (&'a [String], &'a [Vec<usize>]);

/// Everything one topical analysis produces.
#[derive(Clone, Debug)]
pub struct TopicalRun {
    pub model: TopicModel,
    pub train: BTreeMap<String, Vec<TopicAssignment>>,
    pub test: BTreeMap<String, (Vec<TopicAssignment>, Tensor)>,
    pub split: TopicalSplit,
    /// Nodes `<lang>.train` for every training set and `<lang>.test` for
    /// every test set.
    pub graph: RelationGraph,
}

/// Fits the topic model on the pooled training sets, assigns every set,
/// builds the global/local split and the relation graph.
pub fn run_topical(
    backbone: &Backbone,
    train: &BTreeMap<String, TokenSet>,
    test: &BTreeMap<String, TokenSet>,
    k: usize,
    tau: TauRule,
    refit: &LocalRefit,
    seed: u64,
) -> Result<TopicalRun> {
    if train.is_empty() {
        return Err(Error::Input("no training sets to fit topics on".into()));
    }
    let train_emb: BTreeMap<&String, Tensor> =
        train.iter().map(|(l, (_, t))| Ok((l, embed_examples(backbone, t)?))).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = train_emb.values().flat_map(|e| (0..e.rows()).map(|i| e.row(i).to_vec())).collect();
    let model = fit_topic_model(&Tensor::from_rows(&rows)?, k, tau, seed)?;
    let mut train_assign = BTreeMap::new();
    for (l, (ids, _)) in train {
        train_assign.insert(l.clone(), assign_topics(&model, ids, &train_emb[l])?);
    }
    let mut test_assign = BTreeMap::new();
    for (l, (ids, tokens)) in test {
        let e = embed_examples(backbone, tokens)?;
        test_assign.insert(l.clone(), (assign_topics(&model, ids, &e)?, e));
    }
    let split = build_global_local_sets(&train_assign, &test_assign, refit)?;
    let topic = |a: &TopicAssignment| (a.topic >= 0).then_some(a.topic);
    let mut sets: Vec<(String, Vec<Option<i64>>)> =
        train_assign.iter().map(|(l, a)| (format!("{l}.train"), a.iter().map(topic).collect())).collect();
    sets.extend(test_assign.iter().map(|(l, (a, _))| (format!("{l}.test"), a.iter().map(topic).collect())));
    let graph = build_relation_graph(&sets);
    Ok(TopicalRun { model, train: train_assign, test: test_assign, split, graph })
}
