//! Finite-difference check of every gradient of a small fused classifier.

use rand::SeedableRng;
use wlfusion::adapters::AdapterStack;
use wlfusion::encoder::{Backbone, Classifier, EncoderConfig};
use wlfusion::numerics::{finite_diff_check, uniform, ParamSet};
use wlfusion::training::build_fusion_stack;

fn main() -> wlfusion::Result<()> {
    let cfg = EncoderConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        d_ffn: 32,
        vocab_size: 40,
        max_len: 8,
        ..Default::default()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let members: Vec<_> = ["en", "ar"]
        .iter()
        .map(|l| AdapterStack::task(2, l, 16, 2, &mut rng).map(|s| s.task_adapter_set().expect("task adapters")))
        .collect::<wlfusion::Result<_>>()?;
    let mut model = Classifier::new(Backbone::new(cfg, 1)?, Some(build_fusion_stack(&members, 2, 1)?))?;
    model.visit_mut(&mut |p| {
        p.value = uniform(&mut rng, p.value.shape(), 0.5);
        p.trainable = !p.name.starts_with("backbone.mlm");
    });
    let r = finite_diff_check(
        &mut model,
        |m, t| {
            let (logits, _) = m.logits_on_tape(t, &[1, 7, 12, 30, 5], None)?;
            t.cross_entropy(logits, &[1])
        },
        1e-5,
    )?;
    println!("{} scalars checked, max relative error {:.2e} at {}", r.checked, r.max_rel_error, r.worst);
    Ok(())
}
