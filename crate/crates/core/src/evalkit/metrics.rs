use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average precision of one ranked list.
///
/// Items are ranked by descending score, ties broken by ascending id. Returns
/// `None` when there is no positive label (AP is undefined).
pub fn average_precision<S: AsRef<str>>(scores: &[f64], labels: &[u8], ids: &[S]) -> Result<Option<f64>> {
    if scores.len() != labels.len() || scores.len() != ids.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} scores, {} labels, {} ids",
            scores.len(),
            labels.len(),
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].as_ref().cmp(ids[b].as_ref())));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

/// One ranked query for [`map_over_queries`].
#[derive(Clone, Debug, Default)]
pub struct Query {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Mean of the defined per-query APs; `None` if no query has a positive.
pub fn map_over_queries(queries: &[Query]) -> Result<Option<f64>> {
    let mut aps = Vec::new();
    for q in queries {
        if let Some(ap) = average_precision(&q.scores, &q.labels, &q.ids)? {
            aps.push(ap);
        }
    }
    Ok((!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Positive-class F1; every ratio with a zero denominator is 0.
pub fn f1_binary(preds: &[u8], labels: &[u8]) -> Result<F1Scores> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!("{} predictions vs {} labels", preds.len(), labels.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == 1, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    Ok(F1Scores { f1, precision, recall, tp, fp, fn_ })
}

/// Fleiss' kappa for `ratings[item][rater]` with categories `0..categories`.
///
/// Returns `None` when expected agreement is 1 (every rating falls in one
/// category), where kappa is undefined.
pub fn fleiss_kappa(ratings: &[Vec<usize>], categories: usize) -> Result<Option<f64>> {
    let n = ratings.len();
    if n == 0 {
        return Err(Error::Input("no items to rate".into()));
    }
    let m = ratings[0].len();
    if m < 2 {
        return Err(Error::Input("fleiss kappa needs at least two raters".into()));
    }
    let mut totals = vec![0usize; categories];
    let mut p_bar = 0.0;
    for (i, row) in ratings.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Input(format!("item {i} has {} ratings, expected {m}", row.len())));
        }
        let mut counts = vec![0usize; categories];
        for &c in row {
            if c >= categories {
                return Err(Error::Index(format!("category {c} outside 0..{categories}")));
            }
            counts[c] += 1;
            totals[c] += 1;
        }
        let sq: usize = counts.iter().map(|c| c * c).sum();
        p_bar += (sq - m) as f64 / (m * (m - 1)) as f64;
    }
    p_bar /= n as f64;
    let nm = (n * m) as f64;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / nm).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(None);
    }
    Ok(Some((p_bar - p_e) / (1.0 - p_e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_closed_forms() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0], &["a", "b", "c"]).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.9, 0.2], &[0, 1], &["a", "b"]).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[0.9, 0.2], &[0, 0], &["a", "b"]).unwrap(), None);
    }

    #[test]
    fn ap_ties_break_by_id() {
        // equal scores: "a" ranks before "b"
        assert_eq!(average_precision(&[0.5, 0.5], &[0, 1], &["a", "b"]).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[0.5, 0.5], &[1, 0], &["a", "b"]).unwrap(), Some(1.0));
    }

    #[test]
    fn map_skips_undefined_queries() {
        let q = |s: Vec<f64>, l: Vec<u8>| Query {
            ids: (0..s.len()).map(|i| i.to_string()).collect(),
            scores: s,
            labels: l,
        };
        let m = map_over_queries(&[
            q(vec![0.9, 0.1], vec![1, 0]),
            q(vec![0.9, 0.1], vec![0, 0]),
            q(vec![0.9, 0.1], vec![0, 1]),
        ]);
        assert_eq!(m.unwrap(), Some(0.75));
    }

    #[test]
    fn f1_closed_forms() {
        let r = f1_binary(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]).unwrap();
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_binary(&[0, 0], &[1, 0]).unwrap().f1, 0.0);
        assert!(f1_binary(&[0], &[1, 0]).is_err());
    }

    #[test]
    fn kappa_closed_forms() {
        assert_eq!(fleiss_kappa(&[vec![0, 0], vec![1, 1], vec![1, 1]], 2).unwrap(), Some(1.0));
        let k = fleiss_kappa(&[vec![0, 0], vec![1, 1], vec![0, 1], vec![1, 0]], 2).unwrap().unwrap();
        assert!(k.abs() < 1e-15);
        assert_eq!(fleiss_kappa(&[vec![1, 1], vec![1, 1]], 2).unwrap(), None);
    }
}
