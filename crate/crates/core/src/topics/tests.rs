use std::collections::BTreeMap;

use rand::Rng;

use super::*;
use crate::encoder::EncoderConfig;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let mut v = v;
    normalize(&mut v);
    v
}

/// Two tight blobs around orthogonal directions.
fn blobs(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut gold = Vec::new();
    for i in 0..n {
        let g = i % 2;
        let mut v: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.05..0.05)).collect();
        v[g] += 1.0;
        rows.push(unit(v));
        gold.push(g);
    }
    (Tensor::from_rows(&rows).unwrap(), gold)
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

#[test]
fn single_topic_without_threshold() {
    let (e, _) = blobs(10, 1);
    let m = fit_topic_model(&e, 1, TauRule::Fixed(f64::INFINITY), 0).unwrap();
    assert!(assign_topics(&m, &ids(10), &e).unwrap().iter().all(|a| a.topic == 0));
}

#[test]
fn planted_blobs_recovered_exactly() {
    let (e, gold) = blobs(40, 2);
    let m = fit_topic_model(&e, 2, TauRule::Percentile(100.0), 5).unwrap();
    let a = assign_topics(&m, &ids(40), &e).unwrap();
    let map = a[0].topic;
    for (x, g) in a.iter().zip(&gold) {
        assert_eq!(x.topic == map, *g == gold[0]);
        assert_ne!(x.topic, OUTLIER);
    }
    for c in &m.centroids {
        assert!((c.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn threshold_contract() {
    let (e, _) = blobs(20, 3);
    let m = fit_topic_model(&e, 2, TauRule::Fixed(0.2), 0).unwrap();
    let far = unit(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let own = m.centroids[1].clone();
    let t = Tensor::from_rows(&[far, own]).unwrap();
    let a = assign_topics(&m, &ids(2), &t).unwrap();
    assert_eq!(a[0].topic, OUTLIER);
    assert!(a[0].distance > m.tau);
    assert_eq!(a[1].topic, 1);
    assert!(a[1].distance.abs() < 1e-12);
}

#[test]
fn fit_errors() {
    let (e, _) = blobs(4, 1);
    assert!(matches!(fit_topic_model(&e, 5, TauRule::default(), 0), Err(Error::Config(_))));
    assert!(matches!(fit_topic_model(&e, 0, TauRule::default(), 0), Err(Error::Config(_))));
    let m = fit_topic_model(&e, 2, TauRule::default(), 0).unwrap();
    let narrow = Tensor::zeros(&[1, 3]);
    assert!(matches!(assign_topics(&m, &ids(1), &narrow), Err(Error::Dimension(_))));
    assert!(m.tau > 0.0);
}

#[test]
fn fitting_is_deterministic() {
    let (e, _) = blobs(30, 4);
    assert_eq!(
        fit_topic_model(&e, 3, TauRule::default(), 9).unwrap(),
        fit_topic_model(&e, 3, TauRule::default(), 9).unwrap()
    );
}

#[test]
fn embeddings_are_unit_rows() {
    let cfg = EncoderConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ffn: 16,
        vocab_size: 20,
        max_len: 8,
        ..Default::default()
    };
    let bb = Backbone::new(cfg, 1).unwrap();
    let e = embed_examples(&bb, &[vec![1, 4, 5, 0, 0], vec![1, 4, 5], vec![1, 9, 9, 12]]).unwrap();
    for r in 0..3 {
        assert!((e.row(r).iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(e.row(0).iter().zip(e.row(1)).all(|(a, b)| (a - b).abs() < 1e-12));
}

fn assign(pairs: &[(&str, i64)]) -> Vec<TopicAssignment> {
    pairs.iter().map(|(id, t)| TopicAssignment { id: id.to_string(), topic: *t, distance: 0.0 }).collect()
}

#[test]
fn global_and_local_sets() {
    let train: BTreeMap<String, Vec<TopicAssignment>> =
        [("en".to_string(), assign(&[("e1", 0), ("e2", 1)])), ("ar".to_string(), assign(&[("a1", 0), ("a2", 2)]))]
            .into();
    let far = |axis: usize| {
        let mut v = vec![0.0; 4];
        v[axis] = 1.0;
        v
    };
    let test: BTreeMap<String, (Vec<TopicAssignment>, Tensor)> = [
        (
            "en".to_string(),
            (
                assign(&[("te1", 0), ("te2", 1), ("te3", -1), ("te4", -1)]),
                Tensor::from_rows(&[far(0), far(0), far(2), far(2)]).unwrap(),
            ),
        ),
        ("tr".to_string(), (assign(&[("tt1", 0), ("tt2", -1)]), Tensor::from_rows(&[far(0), far(3)]).unwrap())),
    ]
    .into();
    let refit = LocalRefit { k: 2, tau: TauRule::Fixed(f64::INFINITY), min_support: 1, seed: 0 };
    let s = build_global_local_sets(&train, &test, &refit).unwrap();
    assert_eq!(s.global_topics, vec![0]);
    assert_eq!(s.global_ids().into_iter().collect::<Vec<_>>(), vec!["te1", "tt1"]);
    assert_eq!(s.local_ids().into_iter().collect::<Vec<_>>(), vec!["te3", "te4", "tt2"]);
    assert!(s.global_ids().is_disjoint(&s.local_ids()));
}

#[test]
fn relation_graph_extremes() {
    let a = ("a".to_string(), vec![Some(0), Some(0), Some(1)]);
    let b = ("b".to_string(), vec![Some(2), None]);
    let g = build_relation_graph(&[a.clone(), b, ("c".to_string(), a.1.clone())]);
    assert_eq!(g.weight("a", "b"), 0.0);
    assert!(g.edges.iter().all(|e| e.weight > 0.0));
    assert_eq!(g.weight("a", "c"), 100.0);
    assert_eq!(g.nodes[1].size, 2);
    let g = build_relation_graph(&[("x".to_string(), vec![Some(0), Some(1)]), ("y".to_string(), vec![Some(0), None])]);
    assert_eq!(g.weight("x", "y"), 50.0);
    assert!(g.to_dot().contains("\"x\" -- \"y\""));
}
