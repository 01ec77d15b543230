//! Runs the whole synthetic suite and prints zero-shot F1, fusion weights,
//! kappa and topical-split quality.

use wlfusion::suite::{run_suite, SuiteConfig};

fn main() -> wlfusion::Result<()> {
    // optional TOML file overriding any part of the default configuration
    let config: SuiteConfig = match std::env::args().nth(1) {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| wlfusion::Error::Config(format!("suite config: {e}")))?,
        None => SuiteConfig::default(),
    };
    let r = run_suite(&config)?;
    println!("language-adapter masked accuracy (without, with):");
    for (l, (a, b)) in &r.la_accuracy {
        println!("  {l}: {a:.3} -> {b:.3}");
    }
    println!("zero-shot F1 (mean ± std over {} seeds):", r.seeds.len());
    for (model, langs) in &r.f1_summary {
        let cells: Vec<String> = langs.iter().map(|(l, (m, s))| format!("{l} {m:.3}±{s:.3}")).collect();
        println!("  {model:<22} {}", cells.join("  "));
    }
    println!("  majority               {:?}", r.majority_f1);
    let plain = wlfusion::suite::mean_weights(&r.seeds, "WL+AF", false);
    println!("WL+AF+LA fusion weights (token / pooled), WL+AF token weights, planted shared topics:");
    for (l, w) in &r.fusion_token {
        println!("  {l}: token {:?}", w);
        println!("  {l}: pooled {:?}", r.fusion_pooled[l]);
        println!("  {l}: wl+af {:?}", plain[l]);
        println!("  {l}: shared {:?}", r.planted_shared[l]);
    }
    for s in &r.seeds {
        println!("seed {} kappa pooled {:?} ({:.1}s) dev {:?}", s.seed, s.kappa.pooled, s.seconds, s.best_dev);
    }
    let t = &r.topics;
    println!(
        "topics: global P/R {:.3}/{:.3}  local P/R {:.3}/{:.3}  assign acc {:.3}  triples {:.3}  graph err {:.2}",
        t.global_precision,
        t.global_recall,
        t.local_precision,
        t.local_recall,
        t.assignment_accuracy,
        t.triple_accuracy,
        t.max_graph_error
    );
    println!("total {:.1}s", r.seconds);
    Ok(())
}
