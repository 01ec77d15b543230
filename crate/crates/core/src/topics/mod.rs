//! Topic modeling over frozen-encoder embeddings, the global/local
//! evaluation split and the dataset relation graph.

mod graph;
mod pipeline;
mod split;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use graph::{build_relation_graph, Edge, Node, RelationGraph};
pub use pipeline::{run_topical, TokenSet, TopicalRun};
pub use split::{build_global_local_sets, export_topical_tsv, LocalRefit, SplitMember, SplitStage, TopicalSplit};

use crate::datakit::PAD_ID;
use crate::encoder::{effective_len, encode, Backbone};
use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

/// Outlier label.
pub const OUTLIER: i64 = -1;

/// Mean of the non-pad final states of each sequence, unit-normalized.
pub fn embed_examples(backbone: &Backbone, tokens: &[Vec<usize>]) -> Result<Tensor> {
    let d = backbone.d_model();
    let rows = tokens
        .par_iter()
        .map(|ids| {
            let ids = &ids[..effective_len(ids)];
            let h = encode(backbone, ids, None)?;
            let keep: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != PAD_ID).collect();
            let mut v = vec![0.0; d];
            for &i in &keep {
                for (a, x) in v.iter_mut().zip(h.row(i)) {
                    *a += x;
                }
            }
            normalize(&mut v);
            Ok(v)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, d]));
    }
    Tensor::from_rows(&rows)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// How the outlier threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "lowercase")]
pub enum TauRule {
    /// Percentile (0–100] of training-point distances to their own centroid.
    Percentile(f64),
    Fixed(f64),
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Percentile(90.0)
    }
}

impl std::str::FromStr for TauRule {
    type Err = Error;
    /// `p90` style percentiles or a plain number.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad tau {s:?} (expected e.g. p90, p100, 0.35 or inf)"));
        if let Some(p) = s.strip_prefix('p') {
            let p: f64 = p.parse().map_err(|_| bad())?;
            return Ok(TauRule::Percentile(p));
        }
        s.parse().map(TauRule::Fixed).map_err(|_| bad())
    }
}

/// Unit-norm centroids plus a cosine-distance outlier threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub centroids: Vec<Vec<f64>>,
    pub tau: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub id: String,
    /// Centroid index, or [`OUTLIER`].
    pub topic: i64,
    /// Cosine distance to the nearest centroid.
    pub distance: f64,
}

impl TopicModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn width(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid (lowest index on ties) and its distance.
    fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (c, cen) in self.centroids.iter().enumerate() {
            let d = cosine_distance(x, cen);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }
}

const MAX_ITER: usize = 100;

/// Spherical k-means with farthest-point initialization (the first centre
/// is drawn with `seed`), then the outlier threshold from `tau`.
pub fn fit_topic_model(emb: &Tensor, k: usize, tau: TauRule, seed: u64) -> Result<TopicModel> {
    let n = emb.rows();
    if k == 0 {
        return Err(Error::Config("number of topics must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Config(format!("{k} topics requested for {n} points")));
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| emb.row(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![rows[rng.gen_range(0..n)].to_vec()];
    let mut min_d: Vec<f64> = rows.iter().map(|r| cosine_distance(r, &centroids[0])).collect();
    while centroids.len() < k {
        let far = (0..n).max_by(|&a, &b| min_d[a].total_cmp(&min_d[b]).then(b.cmp(&a))).expect("n > 0");
        let c = rows[far].to_vec();
        for (m, r) in min_d.iter_mut().zip(&rows) {
            *m = m.min(cosine_distance(r, &c));
        }
        centroids.push(c);
    }
    for c in centroids.iter_mut() {
        normalize(c);
    }
    let mut model = TopicModel { centroids, tau: f64::INFINITY, seed };
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITER {
        let next: Vec<usize> = rows.iter().map(|r| model.nearest(r).0).collect();
        if next == labels {
            break;
        }
        labels = next;
        let d = emb.cols();
        for (c, cen) in model.centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; d];
            let mut count = 0;
            for (r, &l) in rows.iter().zip(&labels) {
                if l == c {
                    count += 1;
                    sum.iter_mut().zip(*r).for_each(|(a, x)| *a += x);
                }
            }
            // an empty cluster keeps its previous centre
            if count > 0 {
                normalize(&mut sum);
                *cen = sum;
            }
        }
    }
    model.tau = match tau {
        TauRule::Fixed(t) => t,
        TauRule::Percentile(p) => {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::Config(format!("tau percentile {p} outside (0, 100]")));
            }
            let mut d: Vec<f64> = rows.iter().map(|r| model.nearest(r).1).collect();
            d.sort_by(f64::total_cmp);
            let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
            d[rank - 1].max(1e-12)
        }
    };
    if !(model.tau > 0.0) {
        return Err(Error::Config(format!("outlier threshold {} must be positive", model.tau)));
    }
    Ok(model)
}

/// Nearest-centroid topics; [`OUTLIER`] when the distance exceeds τ.
pub fn assign_topics(model: &TopicModel, ids: &[String], emb: &Tensor) -> Result<Vec<TopicAssignment>> {
    if emb.rows() != ids.len() {
        return Err(Error::Input(format!("{} ids for {} embeddings", ids.len(), emb.rows())));
    }
    if emb.rows() > 0 && emb.cols() != model.width() {
        return Err(dim_err(format!("embedding width {} vs topic model width {}", emb.cols(), model.width())));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let (c, distance) = model.nearest(emb.row(i));
            let topic = if distance > model.tau { OUTLIER } else { c as i64 };
            TopicAssignment { id: id.clone(), topic, distance }
        })
        .collect())
}

#[cfg(test)]
mod tests;
