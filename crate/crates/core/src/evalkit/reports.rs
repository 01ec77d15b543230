use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{f1_binary, fleiss_kappa};
use crate::adapters::{count_trainable_params, ParamBreakdown};
use crate::checkpoint;
use crate::datakit::{EntityType, Example};
use crate::encoder::Classifier;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Parameter};
use crate::training::{mean_std, EncodedCorpus, TrainedModel};

/// Mean fusion weights per target language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub model_id: String,
    pub adapters: Vec<String>,
    pub languages: Vec<String>,
    /// `[language][adapter]`, averaged over every layer, example and token.
    pub per_token: Vec<Vec<f64>>,
    /// `[language][adapter]`, averaged over layers and examples at the
    /// pooled (first) position.
    pub pooled: Vec<Vec<f64>>,
    /// `[language][layer][adapter]`, per-token averages.
    pub per_layer: Vec<Vec<Vec<f64>>>,
}

impl FusionReport {
    fn row(&self, lang: &str, pooled: bool) -> Option<&[f64]> {
        let i = self.languages.iter().position(|l| l == lang)?;
        Some(if pooled { &self.pooled[i] } else { &self.per_token[i] })
    }

    /// Adapter with the largest mean weight for `lang`.
    pub fn top_adapter(&self, lang: &str, pooled: bool) -> Option<&str> {
        let row = self.row(lang, pooled)?;
        let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]))?;
        Some(&self.adapters[best])
    }

    /// Long format: `language,aggregation,layer,adapter,weight`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("language,aggregation,layer,adapter,weight\n");
        for (i, lang) in self.languages.iter().enumerate() {
            for (agg, row) in [("token", &self.per_token[i]), ("pooled", &self.pooled[i])] {
                for (a, w) in self.adapters.iter().zip(row) {
                    s.push_str(&format!("{lang},{agg},all,{a},{w:.6}\n"));
                }
            }
            for (l, row) in self.per_layer[i].iter().enumerate() {
                for (a, w) in self.adapters.iter().zip(row) {
                    s.push_str(&format!("{lang},token,{l},{a},{w:.6}\n"));
                }
            }
        }
        s
    }

    /// Heatmap matrix with languages as rows and adapters as columns.
    pub fn heatmap_csv(&self, pooled: bool) -> String {
        let mut s = format!("language,{}\n", self.adapters.join(","));
        for (i, lang) in self.languages.iter().enumerate() {
            let row = if pooled { &self.pooled[i] } else { &self.per_token[i] };
            let cells: Vec<String> = row.iter().map(|w| format!("{w:.6}")).collect();
            s.push_str(&format!("{lang},{}\n", cells.join(",")));
        }
        s
    }
}

/// Fusion weights of a fusion model on each language's data, with that
/// language's adapter (or the fallback) swapped in.
pub fn fusion_attention_report(model: &TrainedModel, data: &[(String, &EncodedCorpus)]) -> Result<FusionReport> {
    let mut adapters: Option<Vec<String>> = None;
    let mut out = FusionReport {
        model_id: model.id(),
        adapters: Vec::new(),
        languages: Vec::new(),
        per_token: Vec::new(),
        pooled: Vec::new(),
        per_layer: Vec::new(),
    };
    for (lang, corpus) in data {
        let prepared = model.for_language(lang)?;
        let [m] = prepared.members.as_slice() else {
            return Err(Error::Config(format!("{} is not a single fusion model", model.id())));
        };
        if !m.stack.as_ref().is_some_and(|s| s.is_fusion()) {
            return Err(Error::Config(format!("{} has no fusion layers", model.id())));
        }
        let n_layers = m.backbone.config.n_layers;
        let mut layer_sum: Vec<Vec<f64>> = Vec::new();
        let mut layer_count = vec![0usize; n_layers];
        let mut pooled_sum: Vec<f64> = Vec::new();
        let mut pooled_count = 0usize;
        for ids in &corpus.tokens {
            for rec in m.score_detailed(ids)?.fusion {
                let n = rec.adapter_tags.len();
                match &adapters {
                    None => adapters = Some(rec.adapter_tags.clone()),
                    Some(a) if *a != rec.adapter_tags => {
                        return Err(Error::Contract("fusion layers disagree on adapter order".into()))
                    }
                    _ => {}
                }
                if layer_sum.is_empty() {
                    layer_sum = vec![vec![0.0; n]; n_layers];
                    pooled_sum = vec![0.0; n];
                }
                for (t, w) in rec.weights.iter().enumerate() {
                    for (acc, x) in layer_sum[rec.layer].iter_mut().zip(w) {
                        *acc += x;
                    }
                    if t == 0 {
                        for (acc, x) in pooled_sum.iter_mut().zip(w) {
                            *acc += x;
                        }
                        pooled_count += 1;
                    }
                }
                layer_count[rec.layer] += rec.weights.len();
            }
        }
        if pooled_count == 0 {
            return Err(Error::Input(format!("no {lang} examples to average fusion weights over")));
        }
        let total: usize = layer_count.iter().sum();
        let n = pooled_sum.len();
        let per_token: Vec<f64> = (0..n).map(|a| layer_sum.iter().map(|r| r[a]).sum::<f64>() / total as f64).collect();
        let per_layer: Vec<Vec<f64>> =
            layer_sum.iter().zip(&layer_count).map(|(r, &c)| r.iter().map(|x| x / c.max(1) as f64).collect()).collect();
        out.languages.push(lang.clone());
        out.per_token.push(per_token);
        out.pooled.push(pooled_sum.iter().map(|x| x / pooled_count as f64).collect());
        out.per_layer.push(per_layer);
    }
    out.adapters = adapters.unwrap_or_default();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityRow {
    pub entity: EntityType,
    pub n_examples: usize,
    /// `None` when no example carries this entity type.
    pub f1_mean: Option<f64>,
    pub f1_std: Option<f64>,
    pub per_seed: Vec<f64>,
}

/// F1 on the examples tagged with each entity type, per seed, then
/// mean ± std across seeds. `per_seed_preds[s][i]` predicts `examples[i]`.
pub fn entity_sliced_scores(examples: &[Example], per_seed_preds: &[Vec<u8>]) -> Result<Vec<EntityRow>> {
    if per_seed_preds.is_empty() {
        return Err(Error::Input("no seed predictions".into()));
    }
    let labels = examples
        .iter()
        .map(|e| e.label.ok_or_else(|| Error::Input(format!("example {} has no label", e.id))))
        .collect::<Result<Vec<u8>>>()?;
    if let Some(p) = per_seed_preds.iter().find(|p| p.len() != examples.len()) {
        return Err(Error::Input(format!("{} predictions for {} examples", p.len(), examples.len())));
    }
    let mut rows = Vec::new();
    for kind in EntityType::ALL {
        let idx: Vec<usize> =
            (0..examples.len()).filter(|&i| examples[i].entity_tags.iter().any(|t| t.kind == kind)).collect();
        if idx.is_empty() {
            rows.push(EntityRow { entity: kind, n_examples: 0, f1_mean: None, f1_std: None, per_seed: Vec::new() });
            continue;
        }
        let gold: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let per_seed = per_seed_preds
            .iter()
            .map(|p| Ok(f1_binary(&idx.iter().map(|&i| p[i]).collect::<Vec<_>>(), &gold)?.f1))
            .collect::<Result<Vec<f64>>>()?;
        let (m, s) = mean_std(&per_seed);
        rows.push(EntityRow { entity: kind, n_examples: idx.len(), f1_mean: Some(m), f1_std: Some(s), per_seed });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub per_language: BTreeMap<String, Option<f64>>,
    pub pooled: Option<f64>,
}

/// Fleiss' kappa between two prediction sets, per language and pooled.
pub fn kappa_report(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Result<KappaReport> {
    let mut per_language = BTreeMap::new();
    let mut all = Vec::new();
    for (lang, pa) in a {
        let pb = b.get(lang).ok_or_else(|| Error::Input(format!("second prediction set lacks {lang}")))?;
        if pa.len() != pb.len() {
            return Err(Error::Input(format!("{lang}: {} vs {} predictions", pa.len(), pb.len())));
        }
        let ratings: Vec<Vec<usize>> = pa.iter().zip(pb).map(|(&x, &y)| vec![x as usize, y as usize]).collect();
        per_language.insert(lang.clone(), if ratings.is_empty() { None } else { fleiss_kappa(&ratings, 2)? });
        all.extend(ratings);
    }
    let pooled = if all.is_empty() { None } else { fleiss_kappa(&all, 2)? };
    Ok(KappaReport { per_language, pooled })
}

/// A model to size, under a display label.
pub struct SizeEntry<'a> {
    pub kind: String,
    pub model: &'a Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub kind: String,
    pub trainable: usize,
    pub breakdown: ParamBreakdown,
    /// Bytes of the file the recipe actually needs to store.
    pub artifact_bytes: u64,
    /// Bytes of a checkpoint holding every parameter of the model.
    pub full_checkpoint_bytes: u64,
    pub ratio: f64,
}

/// Trainable counts and on-disk sizes; files are written under `dir`.
pub fn param_size_report(entries: &[SizeEntry], dir: &Path) -> Result<Vec<SizeRow>> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let breakdown = count_trainable_params(e.model);
        let artifact_bytes = e.model.save(&dir.join(format!("{i}.artifact.bin")), &e.kind)?;
        let mut all: Vec<Parameter> = Vec::new();
        e.model.visit(&mut |p| all.push(p.clone()));
        let refs: Vec<&Parameter> = all.iter().collect();
        let full_checkpoint_bytes = checkpoint::write(
            &dir.join(format!("{i}.full.bin")),
            &serde_json::json!({"format": "full", "kind": e.kind}),
            &refs,
        )?;
        rows.push(SizeRow {
            kind: e.kind.clone(),
            trainable: breakdown.total(),
            breakdown,
            artifact_bytes,
            full_checkpoint_bytes,
            ratio: artifact_bytes as f64 / full_checkpoint_bytes as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::EntityTag;

    fn ex(id: &str, label: u8, kinds: &[EntityType]) -> Example {
        let mut e = Example::new(id, "en", "text", Some(label));
        e.entity_tags = kinds.iter().map(|&k| EntityTag { span: "x".into(), kind: k }).collect();
        e
    }

    #[test]
    fn entity_slices() {
        let xs = vec![ex("a", 1, &[EntityType::Gpe]), ex("b", 0, &[EntityType::Gpe, EntityType::Org]), ex("c", 1, &[])];
        let rows = entity_sliced_scores(&xs, &[vec![1, 0, 0], vec![1, 1, 0]]).unwrap();
        let gpe = &rows[0];
        assert_eq!(gpe.n_examples, 2);
        assert_eq!(gpe.per_seed, vec![1.0, 2.0 / 3.0]);
        let org = rows.iter().find(|r| r.entity == EntityType::Org).unwrap();
        assert_eq!(org.per_seed, vec![0.0, 0.0]);
        let per = rows.iter().find(|r| r.entity == EntityType::Per).unwrap();
        assert_eq!(per.f1_mean, None);
    }

    #[test]
    fn kappa_identical_sets_is_one() {
        let a: BTreeMap<String, Vec<u8>> = [("en".to_string(), vec![1, 0, 1, 0])].into();
        let r = kappa_report(&a, &a).unwrap();
        assert_eq!(r.pooled, Some(1.0));
    }
}
