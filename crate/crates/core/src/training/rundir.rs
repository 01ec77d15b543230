use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainOutcome};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub recipe: String,
    pub seed: u64,
    pub epoch: usize,
    pub seconds: f64,
}

/// One row per (recipe, epoch) of every outcome.
pub fn timing_report(outcomes: &[&TrainOutcome]) -> Vec<TimingRow> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.epochs.iter().map(move |e| TimingRow {
                recipe: o.recipe.clone(),
                seed: o.seed,
                epoch: e.epoch,
                seconds: e.seconds,
            })
        })
        .collect()
}

pub fn write_timing_tsv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut s = String::from("recipe\tseed\tepoch\tseconds\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{:.6}", r.recipe, r.seed, r.epoch, r.seconds);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes `config.json`, `epochs.tsv`, `hashes.json`, `timing.tsv` and the
/// selected checkpoint (`model.bin`) into `dir`. Returns the checkpoint path.
pub fn write_run_dir(dir: &Path, outcome: &TrainOutcome, cfg: &TrainConfig, tag: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(cfg)?)?;
    let mut s = String::from("epoch\ttrain_loss\tdev_metric\tselected\n");
    for e in &outcome.epochs {
        let _ = writeln!(
            s,
            "{}\t{:.8}\t{:.8}\t{}",
            e.epoch,
            e.train_loss,
            e.dev_metric,
            (e.epoch == outcome.best_epoch) as u8
        );
    }
    fs::write(dir.join("epochs.tsv"), s)?;
    let hashes = serde_json::json!({
        "before": outcome.hashes_before,
        "after": outcome.hashes_after,
        "frozen_groups": outcome.frozen_groups(),
        "frozen_intact": outcome.frozen_intact(),
    });
    fs::write(dir.join("hashes.json"), serde_json::to_vec_pretty(&hashes)?)?;
    write_timing_tsv(&dir.join("timing.tsv"), &timing_report(&[outcome]))?;
    let ckpt = dir.join("model.bin");
    outcome.model.save(&ckpt, tag)?;
    Ok(ckpt)
}
