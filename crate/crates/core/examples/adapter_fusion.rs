//! Fuses three world-language task adapters and reports zero-shot F1, the
//! learned fusion weights and the effect of language adapters.

use wlfusion::adapters::AdapterStack;
use wlfusion::evalkit::{evaluate_model, fusion_attention_report, kappa_report, Metric, Scope};
use wlfusion::suite::{prepare, SuiteConfig};
use wlfusion::training::{train_fusion, train_task_adapter, EncodedCorpus, LaMode, ModelKind, ModelSpec, TrainedModel};

fn main() -> wlfusion::Result<()> {
    let mut cfg = SuiteConfig::default();
    cfg.train.epochs = 12;
    let data = prepare(&cfg)?;
    let sources = data.synth.source_languages().to_vec();
    let zero_shot = data.synth.zero_shot_languages().to_vec();
    let mut sets = Vec::new();
    for l in &sources {
        let la = data.la_bank.get(l);
        let o =
            train_task_adapter(&data.backbone, l, &data.train[l], &data.dev[l], &cfg.train, 0, la, LaMode::Installed)?;
        sets.push(o.model.stack.as_ref().and_then(AdapterStack::task_adapter_set).expect("task adapters"));
    }
    let join = |m: &std::collections::BTreeMap<String, EncodedCorpus>, n| {
        EncodedCorpus::concat(n, &sources.iter().map(|l| &m[l]).collect::<Vec<_>>())
    };
    let (train, dev) = (join(&data.train, "train"), join(&data.dev, "dev"));
    let per_example = LaMode::PerExample { bank: &data.la_bank, fallback: &cfg.fallback };
    let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
    let corpora: Vec<_> = zero_shot.iter().map(|l| (l.clone(), data.test.get(l))).collect();
    let mut preds = Vec::new();
    for (kind, mode, bank) in
        [(ModelKind::WlAf, LaMode::Installed, None), (ModelKind::WlAfLa, per_example, Some(data.la_bank.clone()))]
    {
        let o = train_fusion(&data.backbone, &sets, &train, &dev, &cfg.train, 0, mode)?;
        let model = TrainedModel {
            spec: ModelSpec::new(kind, &refs),
            members: vec![o.model],
            la_bank: bank,
            fallback: cfg.fallback.clone(),
            outcomes: Vec::new(),
        };
        let (report, scored) = evaluate_model(&model, &corpora, Scope::ZeroShot, Metric::F1, cfg.train.threshold)?;
        for l in &zero_shot {
            println!("{} {l}: F1 {:.3}", kind.label(), report.value(l, "f1").unwrap_or(f64::NAN));
        }
        let pairs: Vec<_> = zero_shot.iter().map(|l| (l.clone(), &data.test[l])).collect();
        print!("{}", fusion_attention_report(&model, &pairs)?.heatmap_csv(false));
        preds.push(
            zero_shot.iter().filter_map(|l| scored.preds(l, cfg.train.threshold).map(|p| (l.clone(), p))).collect(),
        );
    }
    let k = kappa_report(&preds[0], &preds[1])?;
    println!("kappa WL+AF vs WL+AF+LA: {:?} pooled {:?}", k.per_language, k.pooled);
    Ok(())
}
