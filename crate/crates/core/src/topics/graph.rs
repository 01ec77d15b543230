use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    /// Percentage of the two datasets' samples that sit on shared topics.
    pub weight: f64,
    pub shared_topics: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationGraph {
    pub nodes: Vec<Node>,
    /// Only pairs with a positive weight.
    pub edges: Vec<Edge>,
}

/// Datasets as `(name, per-sample topic)`; `None` marks an outlier, which
/// never counts as shared.
pub fn build_relation_graph<T: Ord + Clone>(datasets: &[(String, Vec<Option<T>>)]) -> RelationGraph {
    let topic_sets: Vec<BTreeSet<&T>> = datasets.iter().map(|(_, t)| t.iter().flatten().collect()).collect();
    let mut edges = Vec::new();
    for i in 0..datasets.len() {
        for j in i + 1..datasets.len() {
            let shared: BTreeSet<&T> = topic_sets[i].intersection(&topic_sets[j]).copied().collect();
            if shared.is_empty() {
                continue;
            }
            let on = |k: usize| datasets[k].1.iter().filter(|t| t.as_ref().is_some_and(|t| shared.contains(t))).count();
            let total = datasets[i].1.len() + datasets[j].1.len();
            edges.push(Edge {
                source: datasets[i].0.clone(),
                target: datasets[j].0.clone(),
                weight: 100.0 * (on(i) + on(j)) as f64 / total as f64,
                shared_topics: shared.len(),
            });
        }
    }
    RelationGraph { nodes: datasets.iter().map(|(n, t)| Node { name: n.clone(), size: t.len() }).collect(), edges }
}

impl RelationGraph {
    /// Edge weight between two datasets (0 when there is no edge).
    pub fn weight(&self, a: &str, b: &str) -> f64 {
        self.edges
            .iter()
            .find(|e| (e.source == a && e.target == b) || (e.source == b && e.target == a))
            .map_or(0.0, |e| e.weight)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph topics {\n");
        for n in &self.nodes {
            s.push_str(&format!("  \"{}\" [label=\"{} ({})\", size={}];\n", n.name, n.name, n.size, n.size));
        }
        for e in &self.edges {
            s.push_str(&format!(
                "  \"{}\" -- \"{}\" [label=\"{:.1}\", weight={:.3}, penwidth={:.2}];\n",
                e.source,
                e.target,
                e.weight,
                e.weight,
                1.0 + e.weight / 20.0
            ));
        }
        s.push_str("}\n");
        s
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Weight matrix keyed by node names.
    pub fn matrix(&self) -> BTreeMap<(String, String), f64> {
        let mut m = BTreeMap::new();
        for e in &self.edges {
            m.insert((e.source.clone(), e.target.clone()), e.weight);
            m.insert((e.target.clone(), e.source.clone()), e.weight);
        }
        m
    }
}
