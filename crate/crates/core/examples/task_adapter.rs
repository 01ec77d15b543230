//! Trains one task adapter on English and evaluates it on every test split.

use wlfusion::evalkit::{evaluate_model, Metric, Scope};
use wlfusion::suite::{prepare, SuiteConfig};
use wlfusion::training::{train_task_adapter, LaMode, ModelKind, ModelSpec, TrainedModel};

fn main() -> wlfusion::Result<()> {
    let mut cfg = SuiteConfig::default();
    cfg.la_languages = vec!["en".into()];
    cfg.backbone_mlm.epochs = 2;
    let data = prepare(&cfg)?;
    let o = train_task_adapter(
        &data.backbone,
        "en",
        &data.train["en"],
        &data.dev["en"],
        &cfg.train,
        0,
        None,
        LaMode::Installed,
    )?;
    for e in &o.epochs {
        println!("epoch {:>2}: train loss {:.4}  dev F1 {:.3}", e.epoch, e.train_loss, e.dev_metric);
    }
    println!("best epoch {} dev F1 {:.3}; frozen groups intact: {}", o.best_epoch, o.best_dev, o.frozen_intact());
    let model = TrainedModel {
        spec: ModelSpec::new(ModelKind::TaSingle, &["en"]),
        members: vec![o.model],
        la_bank: None,
        fallback: cfg.fallback.clone(),
        outcomes: Vec::new(),
    };
    let corpora: Vec<_> = data.test.iter().map(|(l, c)| (l.clone(), Some(c))).collect();
    let (report, _) = evaluate_model(&model, &corpora, Scope::All, Metric::F1, cfg.train.threshold)?;
    print!("{}", report.to_tsv());
    Ok(())
}
