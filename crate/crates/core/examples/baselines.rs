//! Trains every model kind once and prints its zero-shot F1.

use wlfusion::evalkit::{evaluate_model, Metric, Scope};
use wlfusion::suite::{prepare, SuiteConfig};
use wlfusion::training::{train_baseline, ModelKind, ModelSpec, RecipeContext};

fn main() -> wlfusion::Result<()> {
    let mut cfg = SuiteConfig::default();
    cfg.train.epochs = 8;
    let data = prepare(&cfg)?;
    let ctx = RecipeContext {
        backbone: data.backbone.clone(),
        train: data.train.clone(),
        dev: data.dev.clone(),
        la_bank: data.la_bank.clone(),
        fallback: cfg.fallback.clone(),
    };
    let zero_shot = data.synth.zero_shot_languages().to_vec();
    let corpora: Vec<_> = zero_shot.iter().map(|l| (l.clone(), data.test.get(l))).collect();
    for kind in ModelKind::ALL {
        let sources: &[&str] = if kind.is_single() { &["en"] } else { &["en", "ar", "es"] };
        let model = train_baseline(&ModelSpec::new(kind, sources), &ctx, &cfg.train, 0)?;
        let (report, _) = evaluate_model(&model, &corpora, Scope::ZeroShot, Metric::F1, cfg.train.threshold)?;
        let cells: Vec<String> =
            zero_shot.iter().map(|l| format!("{l} {:.3}", report.value(l, "f1").unwrap_or(f64::NAN))).collect();
        println!("{:<28} {}", model.id(), cells.join("  "));
    }
    Ok(())
}
