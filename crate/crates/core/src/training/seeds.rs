use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-seed metrics plus their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRuns {
    pub runs: Vec<(u64, BTreeMap<String, f64>)>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs `recipe` once per seed (in parallel, each with its own state) and
/// aggregates every metric it reports. Results are ordered as `seeds`.
pub fn run_seeds<F>(seeds: &[u64], recipe: F) -> Result<SeedRuns>
where
    F: Fn(u64) -> Result<BTreeMap<String, f64>> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let runs: Vec<(u64, BTreeMap<String, f64>)> =
        seeds.par_iter().map(|&s| recipe(s).map(|m| (s, m))).collect::<Result<_>>()?;
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    let keys: Vec<String> = runs[0].1.keys().cloned().collect();
    for k in keys {
        let vals: Vec<f64> = runs.iter().filter_map(|(_, m)| m.get(&k).copied()).collect();
        if vals.len() != runs.len() {
            return Err(Error::Validation(format!("metric {k} missing from some seeds")));
        }
        let (m, s) = mean_std(&vals);
        mean.insert(k.clone(), m);
        std.insert(k, s);
    }
    Ok(SeedRuns { runs, mean, std })
}
