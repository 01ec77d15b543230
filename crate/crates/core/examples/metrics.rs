//! Ranking and classification metrics on small hand-made inputs.

use wlfusion::evalkit::{average_precision, f1_binary, fleiss_kappa, map_over_queries, Query};

fn main() -> wlfusion::Result<()> {
    let ids: Vec<String> = ["a", "b", "c", "d", "e"].map(String::from).to_vec();
    let scores = [0.9, 0.2, 0.7, 0.7, 0.1];
    let labels = [1, 0, 0, 1, 1];
    println!("AP {:?}", average_precision(&scores, &labels, &ids)?);
    let q = |s: &[f64], l: &[u8]| Query { ids: ids[..s.len()].to_vec(), scores: s.to_vec(), labels: l.to_vec() };
    println!("MAP {:?}", map_over_queries(&[q(&scores, &labels), q(&[0.4, 0.6], &[1, 0]), q(&[0.5], &[0])])?);
    let f = f1_binary(&[1, 1, 0, 1, 0], &labels)?;
    println!("F1 {:.3}  P {:.3}  R {:.3}", f.f1, f.precision, f.recall);
    let ratings = vec![vec![1, 1, 1], vec![0, 0, 1], vec![0, 0, 0], vec![1, 0, 1]];
    println!("Fleiss kappa {:?}", fleiss_kappa(&ratings, 2)?);
    Ok(())
}
