//! Token attributions with integrated gradients for a trained task adapter,
//! with the completeness residual of each example.

use wlfusion::evalkit::integrated_gradients;
use wlfusion::suite::{prepare, SuiteConfig};
use wlfusion::training::{train_task_adapter, LaMode};

fn main() -> wlfusion::Result<()> {
    let mut cfg = SuiteConfig::default();
    cfg.la_languages = vec!["en".into()];
    cfg.train.epochs = 8;
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
    let test = &data.test["tr"];
    for i in 0..5 {
        let a = integrated_gradients(&o.model, &test.ids[i], &test.tokens[i], 256, None)?;
        let toks: Vec<String> = a
            .token_ids
            .iter()
            .zip(&a.scores)
            .map(|(&t, s)| format!("{}:{s:+.3}", data.tokenizer.token(t).unwrap_or("?")))
            .collect();
        println!("{} f={:.3} residual {:.1e}  {}", a.id, a.f_input, a.residual, toks.join(" "));
    }
    Ok(())
}
