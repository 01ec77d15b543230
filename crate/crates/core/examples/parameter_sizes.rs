//! Trainable-parameter counts and on-disk sizes of full fine-tuning versus
//! adapters at the default model size.

use rand::SeedableRng;
use wlfusion::adapters::{adapter_param_formula, AdapterStack};
use wlfusion::encoder::{set_frozen, Backbone, Classifier, EncoderConfig};
use wlfusion::evalkit::{param_size_report, SizeEntry};
use wlfusion::training::{build_fusion_stack, TrainConfig};

fn main() -> wlfusion::Result<()> {
    let enc = EncoderConfig::default();
    let (d, n) = (enc.d_model, enc.n_layers);
    let b = TrainConfig::default().bottleneck_for(d);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let fft = Classifier::new(Backbone::new(enc.clone(), 0)?, None)?;
    let mut frozen = Backbone::new(enc.clone(), 0)?;
    set_frozen(&mut frozen, true, false);
    let ta = Classifier::new(frozen.clone(), Some(AdapterStack::task(n, "en", d, b, &mut rng)?))?;
    let members: Vec<_> = ["en", "ar", "es"]
        .iter()
        .map(|l| AdapterStack::task(n, l, d, b, &mut rng).map(|s| s.task_adapter_set().expect("task adapters")))
        .collect::<wlfusion::Result<_>>()?;
    let af = Classifier::new(frozen, Some(build_fusion_stack(&members, n, 0)?))?;
    let entries = [
        SizeEntry { kind: "FFT".into(), model: &fft },
        SizeEntry { kind: "TA".into(), model: &ta },
        SizeEntry { kind: "AF".into(), model: &af },
    ];
    let dir = std::env::temp_dir().join("wlfusion-sizes-example");
    println!("per-layer adapter parameters 2db+b+d = {}", adapter_param_formula(d, b));
    for r in param_size_report(&entries, &dir)? {
        println!(
            "{:<4} trainable {:>7}  artifact {:>8} B  full {:>8} B  ratio {:.3}",
            r.kind, r.trainable, r.artifact_bytes, r.full_checkpoint_bytes, r.ratio
        );
    }
    Ok(())
}
