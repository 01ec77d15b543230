//! Trains a language adapter over a frozen backbone and compares masked-token
//! accuracy with and without it.

use wlfusion::adapters::AdapterStack;
use wlfusion::encoder::masked_accuracy;
use wlfusion::suite::{prepare, SuiteConfig};
use wlfusion::training::train_language_adapter;

fn main() -> wlfusion::Result<()> {
    let mut cfg = SuiteConfig::default();
    cfg.la_languages = vec!["en".into()];
    cfg.backbone_mlm.epochs = 2;
    let data = prepare(&cfg)?;
    let lang = "tr";
    let corpus = &data.unlabeled[lang];
    let o = train_language_adapter(
        &data.backbone,
        lang,
        corpus,
        &cfg.la_mlm,
        cfg.train.bottleneck_for(cfg.encoder.d_model),
    )?;
    let mut stack = AdapterStack::empty(cfg.encoder.n_layers);
    stack.install_language(&o.adapter)?;
    let before = masked_accuracy(&data.backbone, None, corpus, cfg.la_mlm.mask_prob, 7)?;
    let after = masked_accuracy(&data.backbone, Some(&stack), corpus, cfg.la_mlm.mask_prob, 7)?;
    println!("{lang}: masked accuracy {before:.3} -> {after:.3}");
    println!("backbone unchanged: {}", o.backbone_hash_before == o.backbone_hash_after);
    Ok(())
}
