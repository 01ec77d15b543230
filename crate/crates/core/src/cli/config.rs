use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datakit::SynthConfig;
use crate::encoder::{EncoderConfig, MlmConfig};
use crate::error::{Error, Result};
use crate::evalkit::Metric;
use crate::suite::{SuiteConfig, TopicsConfig};
use crate::topics::TauRule;
use crate::training::TrainConfig;

/// Settings every command reads from; one file can drive a whole pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Language whose adapter stands in for languages without one.
    pub fallback: String,
    pub synth: SynthConfig,
    /// `vocab_size` is replaced by the tokenizer's size.
    pub encoder: EncoderConfig,
    pub backbone_mlm: MlmConfig,
    pub la_mlm: MlmConfig,
    pub train: TrainConfig,
    pub topics: TopicsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let s = SuiteConfig::default();
        PipelineConfig {
            fallback: s.fallback,
            synth: s.synth,
            encoder: s.encoder,
            backbone_mlm: s.backbone_mlm,
            la_mlm: s.la_mlm,
            train: s.train,
            topics: TopicsConfig::default(),
        }
    }
}

/// Pipeline stage a command belongs to; decides which keys a flag sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Backbone,
    Language,
    Train,
    Topics,
    Eval,
}

/// Values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_len: Option<usize>,
    pub metric: Option<Metric>,
    pub threshold: Option<f64>,
    pub la_fallback: Option<String>,
    pub tau: Option<TauRule>,
    pub k: Option<usize>,
    pub refit_k: Option<usize>,
    pub min_support: Option<usize>,
}

pub struct Resolved {
    pub config: PipelineConfig,
    /// Key → `flag`, `config` or `default`.
    pub sources: BTreeMap<String, String>,
}

fn has_key(table: &toml::Table, dotted: &str) -> bool {
    let mut cur = table;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        match cur.get(*p) {
            Some(toml::Value::Table(t)) if i + 1 < parts.len() => cur = t,
            Some(_) => return i + 1 == parts.len(),
            None => return false,
        }
    }
    false
}

pub fn load_config(path: Option<&Path>) -> Result<(PipelineConfig, toml::Table)> {
    let Some(path) = path else {
        return Ok((PipelineConfig::default(), toml::Table::new()));
    };
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
    let defaults = toml::Table::try_from(PipelineConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
    let merged = merge(defaults, &table);
    let config = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
    Ok((config, table))
}

/// `over` laid onto `base`, table by table, so a partial section keeps the
/// pipeline defaults for the keys it omits.
fn merge(mut base: toml::Table, over: &toml::Table) -> toml::Table {
    for (k, v) in over {
        let merged = match (base.remove(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => toml::Value::Table(merge(b, o)),
            _ => v.clone(),
        };
        base.insert(k.clone(), merged);
    }
    base
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Applies `flags` over the file (or built-in defaults) for `stage`.
pub fn resolve(path: Option<&Path>, flags: &Overrides, stage: Stage) -> Result<Resolved> {
    let (mut c, table) = load_config(path)?;
    let mut sources = BTreeMap::new();
    let mut note = |key: &str, flagged: bool| {
        let src = if flagged {
            "flag"
        } else if has_key(&table, key) {
            "config"
        } else {
            "default"
        };
        sources.insert(key.to_string(), src.to_string());
    };
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) -> bool {
        if let Some(v) = v {
            *slot = v.clone();
        }
        v.is_some()
    }
    match stage {
        Stage::Synth => note("synth.seed", set(&mut c.synth.seed, &flags.seed)),
        Stage::Backbone | Stage::Language => {
            let (name, m) = if stage == Stage::Backbone {
                ("backbone_mlm", &mut c.backbone_mlm)
            } else {
                ("la_mlm", &mut c.la_mlm)
            };
            note(&format!("{name}.seed"), set(&mut m.seed, &flags.seed));
            note(&format!("{name}.epochs"), set(&mut m.epochs, &flags.epochs));
            note(&format!("{name}.lr"), set(&mut m.lr, &flags.lr));
            note(&format!("{name}.batch_size"), set(&mut m.batch_size, &flags.batch_size));
            if stage == Stage::Backbone {
                note("encoder.max_len", set(&mut c.encoder.max_len, &flags.max_len));
            }
        }
        Stage::Train => {
            let t = &mut c.train;
            note("train.seeds", set(&mut t.seeds, &flags.seed.map(|s| vec![s])));
            note("train.epochs", set(&mut t.epochs, &flags.epochs));
            note("train.lr", set(&mut t.lr, &flags.lr));
            note("train.batch_size", set(&mut t.batch_size, &flags.batch_size));
            note("train.max_len", set(&mut t.max_len, &flags.max_len));
            note("train.selection_metric", set(&mut t.selection_metric, &flags.metric));
            note("train.threshold", set(&mut t.threshold, &flags.threshold));
            note("fallback", set(&mut c.fallback, &flags.la_fallback));
        }
        Stage::Topics => {
            let t = &mut c.topics;
            note("topics.seed", set(&mut t.seed, &flags.seed));
            note("topics.k", set(&mut t.k, &flags.k));
            note("topics.tau", set(&mut t.tau, &flags.tau));
            note("topics.refit.k", set(&mut t.refit.k, &flags.refit_k));
            note("topics.refit.min_support", set(&mut t.refit.min_support, &flags.min_support));
        }
        Stage::Eval => {
            note("train.selection_metric", set(&mut c.train.selection_metric, &flags.metric));
            note("train.threshold", set(&mut c.train.threshold, &flags.threshold));
            note("fallback", set(&mut c.fallback, &flags.la_fallback));
        }
    }
    if stage == Stage::Train {
        c.train.validate()?;
    }
    Ok(Resolved { config: c, sources })
}
