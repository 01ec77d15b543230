//! Fits the topic model, derives the global and local evaluation sets and
//! prints the dataset relation graph.

use wlfusion::suite::{prepare, run_topics, SuiteConfig};

fn main() -> wlfusion::Result<()> {
    let mut cfg = SuiteConfig::default();
    cfg.la_languages = vec!["en".into()];
    let data = prepare(&cfg)?;
    let t = run_topics(&data)?;
    println!("{} topics; global set {} examples, local set {}", t.model.k(), t.split.global.len(), t.split.local.len());
    println!(
        "global P/R {:.3}/{:.3}  local P/R {:.3}/{:.3}",
        t.global_precision, t.global_recall, t.local_precision, t.local_recall
    );
    println!("local topics: {:?}", t.split.local_topics);
    println!("largest deviation from the planted graph: {:.2}", t.max_graph_error);
    print!("{}", t.graph.to_dot());
    Ok(())
}
