//! Generates the synthetic multilingual corpus and prints per-language
//! statistics and the planted topic layout.

use wlfusion::datakit::{synth_generate, SynthConfig};

fn main() -> wlfusion::Result<()> {
    let out = synth_generate(&SynthConfig::default())?;
    println!("sources {:?}  zero-shot {:?}", out.source_languages(), out.zero_shot_languages());
    for (lang, d) in &out.languages {
        let s = d.test.stats();
        let train = d.train.as_ref().map_or(0, |c| c.examples.len());
        println!(
            "{lang}: train {train:>4}  test {:>4} ({:.1}% check-worthy)  unlabeled {}",
            s.total,
            s.pct_cw,
            d.unlabeled.len()
        );
    }
    if let Some(e) = out.languages["tr"].test.examples.first() {
        println!("sample tr test text: {}  (topic {})", e.text, out.gold[&e.id]);
    }
    for t in &out.topics {
        println!("{:<14} {:?}  train {:?}  test {:?}", t.name, t.scope, t.train_languages, t.test_languages);
    }
    Ok(())
}
