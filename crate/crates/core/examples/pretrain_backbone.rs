//! Builds a vocabulary and pretrains a small encoder with masked language
//! modeling on unlabeled text of every language.

use wlfusion::datakit::{synth_generate, SynthConfig, Tokenizer};
use wlfusion::encoder::{pretrain_backbone_mlm, EncoderConfig, MlmConfig};

fn main() -> wlfusion::Result<()> {
    let synth = synth_generate(&SynthConfig { unlabeled_per_lang: 300, ..Default::default() })?;
    let texts: Vec<&str> = synth.languages.values().flat_map(|d| d.unlabeled.iter().map(String::as_str)).collect();
    let tok = Tokenizer::build(texts.iter().copied(), 24);
    let corpus: Vec<Vec<usize>> = texts.iter().map(|t| tok.encode(t)).collect();
    let cfg = EncoderConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ffn: 64,
        max_len: 24,
        vocab_size: tok.vocab_size(),
        ..Default::default()
    };
    let (bb, report) = pretrain_backbone_mlm(&cfg, &corpus, &MlmConfig { epochs: 3, lr: 3e-3, ..Default::default() })?;
    println!("vocabulary {} tokens, {} sequences", tok.vocab_size(), corpus.len());
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {e}: masked-token loss {loss:.4}");
    }
    let dir = std::env::temp_dir().join("wlfusion-backbone-example");
    std::fs::create_dir_all(&dir)?;
    let bytes = bb.save(&dir.join("backbone.bin"))?;
    tok.save(&dir.join("vocab.json"))?;
    println!("saved {bytes} bytes to {}", dir.display());
    Ok(())
}
