//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Oracles live here, written independently of the library code.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use wlfusion::adapters::{
    adapter_param_formula, count_trainable_params, fusion_forward, fusion_forward_on_tape, AdapterKind, AdapterStack,
    BottleneckAdapter, FusionLayer, LanguageAdapter, TaskSlot,
};
use wlfusion::cli::RunManifest;
use wlfusion::datakit::{synth_generate, SynthConfig, SynthOutput};
use wlfusion::encoder::{set_frozen, Backbone, Classifier, EncoderConfig, MlmConfig};
use wlfusion::evalkit::{
    average_precision, f1_binary, fleiss_kappa, integrated_gradients, integrated_gradients_fn, map_over_queries, Query,
    RESIDUAL_TOLERANCE,
};
use wlfusion::numerics::{finite_diff_check, uniform, ParamSet, Parameter, Tape, Tensor, Var};
use wlfusion::suite::{prepare, run_suite, SuiteConfig, SuiteReport};
use wlfusion::training::{
    build_fusion_stack, train_baseline, train_language_adapter, ModelKind, ModelSpec, RecipeContext, TrainConfig,
};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. gradients

fn rand_param(rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> Parameter {
    Parameter::new(name, uniform(rng, shape, 1.0), true)
}

/// Scalar loss `Σ v ⊙ W` with fixed random `W`.
fn probe(t: &mut Tape, v: Var, seed: u64) -> Var {
    let shape = t.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(uniform(&mut rng, &shape, 1.0));
    let p = t.mul(v, w).unwrap();
    t.sum(p)
}

fn worst<P: ParamSet>(p: &mut P, f: impl Fn(&P, &mut Tape) -> wlfusion::error::Result<Var>) -> f64 {
    finite_diff_check(p, f, 1e-5).unwrap().max_rel_error
}

fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut out = Vec::new();
    let two = |rng: &mut ChaCha8Rng, a: &[usize], b: &[usize]| vec![rand_param(rng, "a", a), rand_param(rng, "b", b)];

    let mut p = two(&mut rng, &[4, 3], &[3, 5]);
    out.push((
        "matmul",
        worst(&mut p, |p, t| {
            let (a, b) = (t.param(&p[0]), t.param(&p[1]));
            let c = t.matmul(a, b)?;
            Ok(probe(t, c, 1))
        }),
    ));
    let mut p = two(&mut rng, &[4, 3], &[5, 3]);
    out.push((
        "matmul_bt",
        worst(&mut p, |p, t| {
            let (a, b) = (t.param(&p[0]), t.param(&p[1]));
            let c = t.matmul_bt(a, b)?;
            Ok(probe(t, c, 2))
        }),
    ));
    let mut p = two(&mut rng, &[3, 4], &[3, 4]);
    out.push((
        "add/sub/mul",
        worst(&mut p, |p, t| {
            let (a, b) = (t.param(&p[0]), t.param(&p[1]));
            let s = t.add(a, b)?;
            let d = t.sub(s, b)?;
            let m = t.mul(d, b)?;
            Ok(probe(t, m, 3))
        }),
    ));
    let mut p = two(&mut rng, &[3, 4], &[4]);
    out.push((
        "add_row/add_const/scale",
        worst(&mut p, |p, t| {
            let (a, b) = (t.param(&p[0]), t.param(&p[1]));
            let r = t.add_row(a, b)?;
            let c = t.add_const(r, &[0.5; 12])?;
            let s = t.scale(c, -1.7);
            Ok(probe(t, s, 4))
        }),
    ));
    let mut p = vec![rand_param(&mut rng, "x", &[4, 5])];
    out.push((
        "relu",
        worst(&mut p, |p, t| {
            let x = t.param(&p[0]);
            let r = t.relu(x);
            Ok(probe(t, r, 5))
        }),
    ));
    let mut p = vec![rand_param(&mut rng, "x", &[3, 6])];
    out.push((
        "softmax_rows",
        worst(&mut p, |p, t| {
            let x = t.param(&p[0]);
            let s = t.softmax_rows(x);
            Ok(probe(t, s, 6))
        }),
    ));
    let mut p =
        vec![rand_param(&mut rng, "x", &[3, 5]), rand_param(&mut rng, "g", &[5]), rand_param(&mut rng, "b", &[5])];
    out.push((
        "layernorm",
        worst(&mut p, |p, t| {
            let (x, g, b) = (t.param(&p[0]), t.param(&p[1]), t.param(&p[2]));
            let y = t.layernorm(x, g, b, 1e-5)?;
            Ok(probe(t, y, 7))
        }),
    ));
    let mut p = vec![rand_param(&mut rng, "x", &[4, 6])];
    out.push((
        "slice/concat/select",
        worst(&mut p, |p, t| {
            let x = t.param(&p[0]);
            let a = t.slice_cols(x, 1, 4)?;
            let b = t.slice_cols(x, 0, 2)?;
            let c = t.concat_cols(&[a, b])?;
            let r = t.concat_rows(&[c, c])?;
            let s = t.select_rows(r, &[7, 0, 3, 3])?;
            Ok(probe(t, s, 8))
        }),
    ));
    let mut p = two(&mut rng, &[4, 3], &[4, 1]);
    out.push((
        "mean_rows/row_dot/mul_col",
        worst(&mut p, |p, t| {
            let (a, s) = (t.param(&p[0]), t.param(&p[1]));
            let d = t.row_dot(a, a)?;
            let m = t.mul_col(a, s)?;
            let mr = t.mean_rows(m);
            let total = t.sum(d);
            let c = t.concat_cols(&[mr, total])?;
            Ok(probe(t, c, 9))
        }),
    ));
    let mut p = vec![rand_param(&mut rng, "l", &[5, 3])];
    out.push((
        "cross_entropy",
        worst(&mut p, |p, t| {
            let l = t.param(&p[0]);
            t.cross_entropy(l, &[2, 0, 1, 1, 2])
        }),
    ));
    let mut p = vec![rand_param(&mut rng, "emb", &[7, 3])];
    out.push((
        "embed",
        worst(&mut p, |p, t| {
            let e = t.embed(&p[0], &[1, 4, 1, 6, 0])?;
            Ok(probe(t, e, 10))
        }),
    ));
    let mut a = random_adapter(&mut rng, 0, "x", 6, 2);
    let h = uniform(&mut rng, &[3, 6], 1.0);
    out.push((
        "adapter_forward",
        worst(&mut a, |a, t| {
            let x = t.constant(h.clone());
            let y = a.forward_on_tape(t, x)?;
            Ok(probe(t, y, 11))
        }),
    ));
    let mut f = random_fusion(&mut rng, 3, 6, 2);
    f.visit_mut(&mut |p| p.trainable = true);
    out.push((
        "fusion_forward",
        worst(&mut f, |f, t| {
            let x = t.constant(h.clone());
            let (y, _) = fusion_forward_on_tape(f, t, x)?;
            Ok(probe(t, y, 12))
        }),
    ));
    out
}

fn random_adapter(rng: &mut ChaCha8Rng, layer: usize, lang: &str, d: usize, b: usize) -> BottleneckAdapter {
    let mut a = BottleneckAdapter::new(layer, AdapterKind::Task, lang, d, b, rng).unwrap();
    a.visit_mut(&mut |p| p.value = uniform(rng, p.value.shape(), 0.6));
    a
}

fn random_fusion(rng: &mut ChaCha8Rng, n: usize, d: usize, b: usize) -> FusionLayer {
    let members = (0..n).map(|i| random_adapter(rng, 0, &format!("m{i}"), d, b)).collect();
    let mut f = FusionLayer::new(0, members, rng).unwrap();
    for w in [&mut f.w_q, &mut f.w_k, &mut f.w_v] {
        w.value = uniform(rng, &[d, d], 0.7);
    }
    f
}

/// Two-layer WL+AF+LA classifier at d=16 with every weight random and
/// trainable (the MLM head is unused by classification and left frozen).
fn full_model(seed: u64) -> Classifier {
    let cfg = EncoderConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        d_ffn: 32,
        vocab_size: 30,
        max_len: 8,
        ..Default::default()
    };
    let bb = Backbone::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Vec<BottleneckAdapter>> = ["en", "ar", "es"]
        .iter()
        .map(|l| (0..2).map(|layer| random_adapter(&mut rng, layer, l, 16, 2)).collect())
        .collect();
    let mut stack = build_fusion_stack(&members, 2, seed).unwrap();
    let mut la = LanguageAdapter::new("tr", 2, 16, 2, &mut rng).unwrap();
    la.visit_mut(&mut |p| p.value = uniform(&mut rng, p.value.shape(), 0.6));
    stack.install_language(&la).unwrap();
    let mut m = Classifier::new(bb, Some(stack)).unwrap();
    m.visit_mut(&mut |p| {
        let noise = uniform(&mut rng, p.value.shape(), 0.3);
        for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
        p.trainable = !p.name.starts_with("backbone.mlm");
    });
    m
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let prims = primitive_errors();
    let mut model = full_model(7);
    let batch: [(&[usize], usize); 2] = [(&[1, 5, 9, 22, 4, 17], 1), (&[1, 28, 3, 11], 0)];
    let names: BTreeSet<String> = {
        let mut v = Vec::new();
        model.visit(&mut |p| v.push(p.name.clone()));
        let n = v.len();
        let s: BTreeSet<String> = v.into_iter().collect();
        assert_eq!(s.len(), n, "parameter names must be unique for the check");
        s
    };
    let rep = finite_diff_check(
        &mut model,
        |m, t| {
            let mut losses = Vec::new();
            for (ids, y) in batch {
                let (logits, _) = m.logits_on_tape(t, ids, None)?;
                losses.push(t.cross_entropy(logits, &[y])?);
            }
            t.add(losses[0], losses[1])
        },
        1e-5,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let prim_max = prims.iter().map(|p| p.1).fold(0.0, f64::max);
    let worst_prim = prims.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    ensure(
        prim_max < 1e-4 && rep.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "{} primitives max rel err {prim_max:.2e} ({worst_prim}); WL+AF+LA d=16 model {} scalars over {} tensors max rel err {:.2e} ({}); {secs:.1}s",
            prims.len(),
            rep.checked,
            names.len(),
            rep.max_rel_error,
            rep.worst
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. frozen weights

/// SHA-256 over shape and value bits of the parameters named by `keep`, in
/// name order.
fn digest<P: ParamSet + ?Sized>(p: &P, keep: impl Fn(&str) -> bool) -> (String, usize) {
    let mut items: Vec<(String, Vec<usize>, Vec<u64>)> = Vec::new();
    p.visit(&mut |x| {
        if keep(&x.name) {
            items.push((
                x.name.clone(),
                x.value.shape().to_vec(),
                x.value.data().iter().map(|v| v.to_bits()).collect(),
            ));
        }
    });
    items.sort();
    let mut h = Sha256::new();
    for (name, shape, bits) in &items {
        h.update(name.as_bytes());
        for s in shape {
            h.update((*s as u64).to_le_bytes());
        }
        for b in bits {
            h.update(b.to_le_bytes());
        }
    }
    (hex::encode(h.finalize()), items.len())
}

fn trunk(n: &str) -> bool {
    n.starts_with("backbone.")
}

fn small_suite() -> SuiteConfig {
    let mut c = SuiteConfig::default();
    c.synth =
        SynthConfig { train_per_lang: 60, dev_per_lang: 30, test_per_lang: 30, unlabeled_per_lang: 80, ..c.synth };
    c.backbone_mlm.epochs = 1;
    c.la_mlm.epochs = 1;
    c.la_languages = vec!["en".into(), "ar".into(), "es".into()];
    c.train.epochs = 2;
    c.train.seeds = vec![3];
    c
}

fn criterion_2() -> Check {
    let cfg = small_suite();
    let data = prepare(&cfg).unwrap();
    let bb = &data.backbone;
    let trunk_before = digest(bb, trunk);
    let mut lines = Vec::new();
    let mut ok = true;

    let before_la = digest(bb, |_| true);
    let lo = train_language_adapter(bb, "en", &data.unlabeled["en"], &MlmConfig { epochs: 1, ..cfg.la_mlm.clone() }, 4)
        .unwrap();
    let la_ok = digest(bb, |_| true) == before_la && lo.backbone_hash_before == lo.backbone_hash_after;
    ok &= la_ok;
    lines.push(format!("la-mlm:{}", if la_ok { "same" } else { "CHANGED" }));

    let ctx = RecipeContext {
        backbone: bb.clone(),
        train: data.train.clone(),
        dev: data.dev.clone(),
        la_bank: data.la_bank.clone(),
        fallback: cfg.fallback.clone(),
    };
    let kinds = [
        (ModelKind::TaSingle, vec!["en"]),
        (ModelKind::TaLaSingle, vec!["ar"]),
        (ModelKind::WlTa, vec!["en", "ar", "es"]),
        (ModelKind::WlTaLa, vec!["en", "ar", "es"]),
        (ModelKind::WlAf, vec!["en", "ar", "es"]),
        (ModelKind::WlAfLa, vec!["en", "ar", "es"]),
    ];
    for (kind, src) in kinds {
        let m = train_baseline(&ModelSpec::new(kind, &src), &ctx, &cfg.train, 3).unwrap();
        let mut same = true;
        for o in &m.outcomes {
            same &= digest(&o.model, trunk) == trunk_before;
            let stack = o.model.stack.as_ref().expect("adapter recipe");
            if let Some(la) = stack.active_language() {
                let installed = digest(stack, |n| n.contains(".la."));
                same &= installed == digest(&data.la_bank.adapters[la], |_| true);
            }
        }
        if matches!(kind, ModelKind::WlAf | ModelKind::WlAfLa) {
            let fused = &m.outcomes.last().unwrap().model;
            for (o, l) in m.outcomes.iter().zip(&src) {
                let tag = format!(".ta.{l}.");
                let trained = digest(o.model.stack.as_ref().unwrap(), |n| n.contains(&tag));
                let member = digest(fused.stack.as_ref().unwrap(), |n| n.contains(&tag));
                same &= trained.1 > 0 && trained == member;
            }
        }
        same &= m.outcomes.iter().all(|o| o.frozen_intact());
        ok &= same;
        lines.push(format!("{}:{}", kind.label(), if same { "same" } else { "CHANGED" }));
    }
    ensure(ok, format!("backbone trunk {} tensors; {}", trunk_before.1, lines.join(" ")))
}

// ---------------------------------------------------------------------------
// 3. parameter efficiency

fn criterion_3() -> Check {
    let enc = EncoderConfig::default();
    let d = enc.d_model;
    let b = TrainConfig::default().bottleneck_for(d);
    let mut bb = Backbone::new(enc.clone(), 0).unwrap();
    let mut backbone_total = 0usize;
    bb.visit(&mut |p| backbone_total += p.value.data().len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stack = AdapterStack::task(enc.n_layers, "en", d, b, &mut rng).unwrap();
    set_frozen(&mut bb, true, false);
    let full = Classifier::new(Backbone::new(enc.clone(), 0).unwrap(), None).unwrap();
    let ta = Classifier::new(bb, Some(stack)).unwrap();
    let counted = count_trainable_params(&ta);
    let per_layer = 2 * d * b + b + d;
    let formula_ok = counted.task_adapters == enc.n_layers * per_layer && adapter_param_formula(d, b) == per_layer;
    let mut head = 0usize;
    ta.backbone.head.w.value.data().iter().chain(ta.backbone.head.b.value.data()).for_each(|_| head += 1);
    let ratio = counted.task_adapters as f64 / backbone_total as f64;
    let ratio_head = (counted.task_adapters + head) as f64 / backbone_total as f64;

    let dir = tempfile::tempdir().unwrap();
    let (ta_path, full_path) = (dir.path().join("ta.bin"), dir.path().join("full.bin"));
    ta.save(&ta_path, "ta.en").unwrap();
    full.save(&full_path, "full").unwrap();
    let (ta_bytes, full_bytes) = (fs::metadata(&ta_path).unwrap().len(), fs::metadata(&full_path).unwrap().len());
    let size_ratio = ta_bytes as f64 / full_bytes as f64;
    ensure(
        ratio < 0.05 && ratio_head < 0.05 && formula_ok && size_ratio < 0.10,
        format!(
            "d={d} b={b}: TA {} = {}×(2db+b+d={per_layer}) {}; TA/backbone {:.3}% (with head {:.3}%); artifact {ta_bytes} B / full {full_bytes} B = {:.2}%",
            counted.task_adapters,
            enc.n_layers,
            if formula_ok { "ok" } else { "MISMATCH" },
            100.0 * ratio,
            100.0 * ratio_head,
            100.0 * size_ratio
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. fusion identities

/// Token-by-token evaluation of `h + Σ softmax(⟨h W_q, TA_n(h) W_k⟩)_n · TA_n(h) W_v`.
fn fusion_oracle(f: &FusionLayer, h: &Tensor) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = h.cols();
    let row_times = |x: &[f64], w: &Tensor| -> Vec<f64> {
        (0..w.cols()).map(|j| (0..x.len()).map(|i| x[i] * w.at(i, j)).sum()).collect()
    };
    let (mut outs, mut weights) = (Vec::new(), Vec::new());
    for t in 0..h.rows() {
        let x = h.row(t);
        let q = row_times(x, &f.w_q.value);
        let mut scores = Vec::new();
        let mut values = Vec::new();
        for m in &f.members {
            let z: Vec<f64> = row_times(x, &m.w_down.value)
                .iter()
                .zip(m.b_down.value.data())
                .map(|(a, b)| (a + b).max(0.0))
                .collect();
            let o: Vec<f64> = row_times(&z, &m.w_up.value)
                .iter()
                .zip(m.b_up.value.data())
                .zip(x)
                .map(|((a, b), c)| a + b + c)
                .collect();
            let k = row_times(&o, &f.w_k.value);
            scores.push(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>());
            values.push(row_times(&o, &f.w_v.value));
        }
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = e.iter().sum();
        let s: Vec<f64> = e.iter().map(|v| v / z).collect();
        let mut out = x.to_vec();
        for (n, v) in values.iter().enumerate() {
            for j in 0..d {
                out[j] += s[n] * v[j];
            }
        }
        outs.push(out);
        weights.push(s);
    }
    (outs, weights)
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut single_ok = true;
    for _ in 0..20 {
        let f = random_fusion(&mut rng, 1, 6, 3);
        let (_, rec) = fusion_forward(&f, &uniform(&mut rng, &[4, 6], 2.0)).unwrap();
        single_ok &= rec.weights.iter().flatten().all(|&w| w == 1.0);
    }
    let mut identical_err: f64 = 0.0;
    for n in 2..=6 {
        let m = random_adapter(&mut rng, 0, "same", 8, 2);
        let mut f = FusionLayer::new(0, vec![m; n], &mut rng).unwrap();
        f.w_q.value = uniform(&mut rng, &[8, 8], 1.0);
        f.w_k.value = uniform(&mut rng, &[8, 8], 1.0);
        let (_, rec) = fusion_forward(&f, &uniform(&mut rng, &[5, 8], 2.0)).unwrap();
        for w in rec.weights.iter().flatten() {
            identical_err = identical_err.max((w - 1.0 / n as f64).abs());
        }
    }
    let mut oracle_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let d = rng.gen_range(3..=10);
        let b = rng.gen_range(1..d);
        let len = rng.gen_range(1..=6);
        let f = random_fusion(&mut rng, n, d, b);
        let h = uniform(&mut rng, &[len, d], 1.5);
        let (out, rec) = fusion_forward(&f, &h).unwrap();
        let (o_out, o_w) = fusion_oracle(&f, &h);
        for t in 0..len {
            for j in 0..d {
                oracle_err = oracle_err.max((out.at(t, j) - o_out[t][j]).abs());
            }
            for (a, b) in rec.weights[t].iter().zip(&o_w[t]) {
                oracle_err = oracle_err.max((a - b).abs());
            }
        }
    }
    ensure(
        single_ok && identical_err <= 1e-9 && oracle_err <= 1e-10,
        format!(
            "single member weight exactly 1: {single_ok}; N identical max |w − 1/N| {identical_err:.1e}; 100 configs max |Δ| vs oracle {oracle_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. metric oracles

/// AP from pairwise rank counting: the rank of item i is one plus the number
/// of items ordered before it (higher score, or equal score and smaller id).
fn ap_oracle(scores: &[f64], labels: &[u8], ids: &[String]) -> Option<f64> {
    let before = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] < ids[i]);
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 1).collect();
    if pos.is_empty() {
        return None;
    }
    let total: f64 = pos
        .iter()
        .map(|&i| {
            let rank = 1 + (0..scores.len()).filter(|&j| j != i && before(j, i)).count();
            let hits = 1 + pos.iter().filter(|&&j| j != i && before(j, i)).count();
            hits as f64 / rank as f64
        })
        .sum();
    Some(total / pos.len() as f64)
}

/// F1 from a 2×2 confusion matrix via the harmonic mean of P and R.
fn f1_oracle(preds: &[u8], labels: &[u8]) -> f64 {
    let mut cm = [[0usize; 2]; 2];
    for (&p, &l) in preds.iter().zip(labels) {
        cm[p as usize][l as usize] += 1;
    }
    let (tp, fp, fn_) = (cm[1][1] as f64, cm[1][0] as f64, cm[0][1] as f64);
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Kappa from ordered rater-pair agreement counted item by item.
fn kappa_oracle(ratings: &[Vec<usize>], k: usize) -> Option<f64> {
    let (n, m) = (ratings.len(), ratings[0].len());
    let mut agree = 0.0;
    for row in ratings {
        let mut pairs = 0usize;
        for a in 0..m {
            for b in 0..m {
                if a != b && row[a] == row[b] {
                    pairs += 1;
                }
            }
        }
        agree += pairs as f64 / (m * (m - 1)) as f64;
    }
    let p_obs = agree / n as f64;
    let mut p_exp = 0.0;
    for c in 0..k {
        let share = ratings.iter().flatten().filter(|&&x| x == c).count() as f64 / (n * m) as f64;
        p_exp += share * share;
    }
    (p_exp < 1.0).then(|| (p_obs - p_exp) / (1.0 - p_exp))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut ap_err, mut map_err, mut f1_err, mut k_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut null_mismatch = 0;
    for _ in 0..200 {
        let n = 10;
        let ids: Vec<String> = (0..n).map(|i| format!("x{:02}", rng.gen_range(0..100) * 100 + i)).collect();
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.35) as u8).collect();
        match (average_precision(&scores, &labels, &ids).unwrap(), ap_oracle(&scores, &labels, &ids)) {
            (Some(a), Some(b)) => ap_err = ap_err.max((a - b).abs()),
            (None, None) => {}
            _ => null_mismatch += 1,
        }
    }
    for _ in 0..200 {
        let queries: Vec<Query> = (0..rng.gen_range(1..5))
            .map(|_| {
                let n = rng.gen_range(1..9);
                Query {
                    ids: (0..n).map(|i| format!("q{i}")).collect(),
                    scores: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    labels: (0..n).map(|_| rng.gen_bool(0.3) as u8).collect(),
                }
            })
            .collect();
        let aps: Vec<f64> = queries.iter().filter_map(|q| ap_oracle(&q.scores, &q.labels, &q.ids)).collect();
        let want = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
        match (map_over_queries(&queries).unwrap(), want) {
            (Some(a), Some(b)) => map_err = map_err.max((a - b).abs()),
            (None, None) => {}
            _ => null_mismatch += 1,
        }
    }
    for _ in 0..200 {
        let n = rng.gen_range(1..30);
        let preds: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        f1_err = f1_err.max((f1_binary(&preds, &labels).unwrap().f1 - f1_oracle(&preds, &labels)).abs());
    }
    for _ in 0..200 {
        let (n, m, k) = (rng.gen_range(1..15), rng.gen_range(2..6), rng.gen_range(2..4));
        let ratings: Vec<Vec<usize>> = (0..n).map(|_| (0..m).map(|_| rng.gen_range(0..k)).collect()).collect();
        match (fleiss_kappa(&ratings, k).unwrap(), kappa_oracle(&ratings, k)) {
            (Some(a), Some(b)) => k_err = k_err.max((a - b).abs()),
            (None, None) => {}
            _ => null_mismatch += 1,
        }
    }
    let ids = |n: usize| (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>();
    let trivial = [
        average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0], &ids(3)).unwrap() == Some(1.0),
        average_precision(&[0.9, 0.1], &[0, 1], &ids(2)).unwrap() == Some(0.5),
        average_precision(&[0.9, 0.1], &[0, 0], &ids(2)).unwrap().is_none(),
        f1_binary(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]).unwrap().f1 == 2.0 / 3.0,
        f1_binary(&[0, 0, 0], &[1, 0, 1]).unwrap().f1 == 0.0,
        f1_binary(&[1, 0, 1], &[1, 0, 1]).unwrap().f1 == 1.0,
        fleiss_kappa(&[vec![0, 0], vec![1, 1], vec![0, 0]], 2).unwrap() == Some(1.0),
        fleiss_kappa(&[vec![0, 0], vec![1, 1], vec![0, 1], vec![1, 0]], 2).unwrap() == Some(0.0),
        fleiss_kappa(&[vec![1, 1], vec![1, 1]], 2).unwrap().is_none(),
    ];
    let trivial_ok = trivial.iter().filter(|&&t| t).count();
    let worst = ap_err.max(map_err).max(f1_err).max(k_err);
    ensure(
        worst <= 1e-12 && null_mismatch == 0 && trivial_ok == trivial.len(),
        format!(
            "max |Δ| AP {ap_err:.1e}, MAP {map_err:.1e}, F1 {f1_err:.1e}, kappa {k_err:.1e} (200 instances each); null mismatches {null_mismatch}; closed forms {trivial_ok}/{}",
            trivial.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6, 7, 8, 11. synthetic suite

struct SuiteRun {
    report: SuiteReport,
    synth: SynthOutput,
    seconds: f64,
}

fn suite() -> &'static SuiteRun {
    static RUN: OnceLock<SuiteRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = SuiteConfig::default();
        let start = Instant::now();
        let report = run_suite(&cfg).unwrap();
        let seconds = start.elapsed().as_secs_f64();
        SuiteRun { report, synth: synth_generate(&cfg.synth).unwrap(), seconds }
    })
}

fn majority_f1_oracle(labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if 2 * pos > labels.len() {
        f1_oracle(&vec![1; labels.len()], labels)
    } else {
        f1_oracle(&vec![0; labels.len()], labels)
    }
}

fn criterion_6() -> Check {
    let s = suite();
    let r = &s.report;
    let sources = s.synth.source_languages();
    let mut beats = 0;
    let mut margin_ok = true;
    let mut rows = Vec::new();
    for z in s.synth.zero_shot_languages() {
        let af = r.f1_summary["WL+AF"][z].0;
        let singles: Vec<f64> = sources.iter().map(|l| r.f1_summary[&format!("TA+LA-single[{l}]")][z].0).collect();
        let best_single = singles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let labels: Vec<u8> =
            s.synth.languages[z].test.examples.iter().map(|e| e.label.expect("labeled test")).collect();
        let majority = majority_f1_oracle(&labels);
        beats += (af >= best_single) as usize;
        margin_ok &= af >= majority + 0.10;
        rows.push(format!("{z}: WL+AF {af:.3} vs best TA+LA {best_single:.3}, majority {majority:.3}"));
    }
    let n_seeds = r.seeds.len();
    ensure(
        beats >= 2 && margin_ok && n_seeds == 5 && s.seconds < 600.0,
        format!("{}; WL+AF ≥ singles on {beats}/3; {n_seeds} seeds; {:.0}s end to end", rows.join("; "), s.seconds),
    )
}

fn criterion_7() -> Check {
    let s = suite();
    let t = &s.report.topics;
    let synth = &s.synth;
    let sources: BTreeSet<&str> = synth.source_languages().iter().map(String::as_str).collect();
    let topic = |id: &str| synth.topics.iter().find(|t| t.name == synth.gold[id]).expect("gold topic");
    let mut gold_global = BTreeSet::new();
    let mut gold_local = BTreeSet::new();
    for (l, d) in &synth.languages {
        for e in &d.test.examples {
            let info = topic(&e.id);
            let trained: BTreeSet<&str> = info.train_languages.iter().map(String::as_str).collect();
            if sources.is_subset(&trained) {
                gold_global.insert(e.id.clone());
            } else if info.test_languages.len() == 1 && &info.test_languages[0] == l {
                gold_local.insert(e.id.clone());
            }
        }
    }
    let found_global: BTreeSet<String> = t.split.global.iter().map(|m| m.id.clone()).collect();
    let found_local: BTreeSet<String> = t.split.local.iter().map(|m| m.id.clone()).collect();
    let pr = |found: &BTreeSet<String>, gold: &BTreeSet<String>| {
        let hit = found.intersection(gold).count() as f64;
        (hit / found.len().max(1) as f64, hit / gold.len().max(1) as f64)
    };
    let (gp, gr) = pr(&found_global, &gold_global);
    let (lp, lr) = pr(&found_local, &gold_local);
    let disjoint = found_global.is_disjoint(&found_local);

    // planted overlap over topics seen in training
    let fitted =
        |id: &str| -> Option<&str> { (!topic(id).train_languages.is_empty()).then(|| synth.gold[id].as_str()) };
    let mut sets: Vec<(String, Vec<Option<&str>>)> = Vec::new();
    for l in synth.source_languages() {
        let c = synth.languages[l].train.as_ref().unwrap();
        sets.push((format!("{l}.train"), c.examples.iter().map(|e| fitted(&e.id)).collect()));
    }
    for (l, d) in &synth.languages {
        sets.push((format!("{l}.test"), d.test.examples.iter().map(|e| fitted(&e.id)).collect()));
    }
    let mut max_err: f64 = 0.0;
    let mut pairs = 0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let ti: BTreeSet<&str> = sets[i].1.iter().flatten().copied().collect();
            let tj: BTreeSet<&str> = sets[j].1.iter().flatten().copied().collect();
            let shared: BTreeSet<&str> = ti.intersection(&tj).copied().collect();
            let on = |v: &[Option<&str>]| v.iter().filter(|x| x.is_some_and(|x| shared.contains(x))).count();
            let planted = 100.0 * (on(&sets[i].1) + on(&sets[j].1)) as f64 / (sets[i].1.len() + sets[j].1.len()) as f64;
            max_err = max_err.max((t.graph.weight(&sets[i].0, &sets[j].0) - planted).abs());
            pairs += 1;
        }
    }
    ensure(
        gp >= 0.9 && gr >= 0.9 && lp >= 0.9 && lr >= 0.9 && disjoint && max_err <= 5.0,
        format!(
            "global P {gp:.3} R {gr:.3} ({} gold); local P {lp:.3} R {lr:.3} ({} gold); disjoint {disjoint}; graph max |Δ| {max_err:.2} over {pairs} pairs",
            gold_global.len(),
            gold_local.len()
        ),
    )
}

fn criterion_8() -> Check {
    let s = suite();
    let synth = &s.synth;
    let mut hits = 0;
    let mut rows = Vec::new();
    for z in synth.zero_shot_languages() {
        let shared: Vec<(&String, usize)> = synth
            .source_languages()
            .iter()
            .map(|src| {
                (
                    src,
                    synth
                        .topics
                        .iter()
                        .filter(|t| t.train_languages.contains(src) && t.test_languages.contains(z))
                        .count(),
                )
            })
            .collect();
        let planted = shared.iter().max_by_key(|(_, n)| *n).unwrap().0;
        let w = &s.report.fusion_token[z];
        let (top, top_w) = w.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let ok = top == &format!("ta.{planted}");
        hits += ok as usize;
        let ws: Vec<String> = w.iter().map(|(a, v)| format!("{a} {v:.3}")).collect();
        rows.push(format!(
            "{z}: top {top} ({top_w:.3}) planted ta.{planted} {} [{}]",
            if ok { "✓" } else { "✗" },
            ws.join(", ")
        ));
    }
    ensure(
        hits >= 2,
        format!("WL+AF+LA token-average weights over {} seeds; {}; {hits}/3", s.report.seeds.len(), rows.join("; ")),
    )
}

fn criterion_11() -> Check {
    let s = suite();
    let seeds = &s.report.seeds;
    let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut pooled = Vec::new();
    for r in seeds {
        for (l, k) in &r.kappa.per_language {
            if let Some(k) = k {
                per.entry(l.clone()).or_default().push(*k);
            }
        }
        pooled.extend(r.kappa.pooled);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let rows: Vec<String> = per.iter().map(|(l, v)| format!("{l} {:.3}", mean(v))).collect();
    let in_range = per.values().flatten().chain(&pooled).all(|k| (-1.0..=1.0).contains(k));
    ensure(
        per.len() == s.synth.zero_shot_languages().len() && pooled.len() == seeds.len() && in_range,
        format!(
            "Fleiss kappa WL+AF vs WL+AF+LA, mean over {} seeds: {}; pooled {:.3}",
            seeds.len(),
            rows.join(", "),
            mean(&pooled)
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. integrated gradients

fn criterion_9() -> Check {
    let w = [0.3, -1.7, 2.25, 0.0, 5.5, -0.01];
    let x = [1.0, 2.0, -0.5, 4.0, 0.1, 9.0];
    let zero = [0.0; 6];
    let lin = |v: &[f64]| Ok((v.iter().zip(&w).map(|(a, c)| a * c).sum(), w.to_vec()));
    let r = integrated_gradients_fn(&x, &zero, 256, lin).unwrap();
    let lin_err = (0..6).map(|i| (r.attributions[i] - w[i] * x[i]).abs()).fold(0.0, f64::max);
    let same = integrated_gradients_fn(&x, &x, 256, lin).unwrap();
    let same_ok = same.attributions.iter().all(|&a| a == 0.0);

    let cfg = EncoderConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ffn: 64,
        vocab_size: 60,
        max_len: 24,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut max_res: f64 = 0.0;
    for i in 0..50 {
        let bb = Backbone::new(cfg.clone(), i / 10).unwrap();
        let stack = if i % 2 == 0 {
            let members: Vec<Vec<BottleneckAdapter>> = ["en", "ar", "es"]
                .iter()
                .map(|l| (0..2).map(|layer| random_adapter(&mut rng, layer, l, 32, 4)).collect())
                .collect();
            let mut s = build_fusion_stack(&members, 2, i).unwrap();
            for slot in &mut s.layers {
                if let TaskSlot::Fusion(f) = &mut slot.task {
                    f.w_v.value = uniform(&mut rng, &[32, 32], 0.3);
                }
            }
            Some(s)
        } else {
            let mut s = AdapterStack::empty(2);
            for (l, slot) in s.layers.iter_mut().enumerate() {
                slot.task = TaskSlot::Single(random_adapter(&mut rng, l, "en", 32, 4));
            }
            Some(s)
        };
        let model = Classifier::new(bb, stack).unwrap();
        let len = rng.gen_range(3..=20);
        let ids: Vec<usize> = std::iter::once(1).chain((1..len).map(|_| rng.gen_range(4..60))).collect();
        let a = integrated_gradients(&model, &format!("r{i}"), &ids, 256, None).unwrap();
        max_res = max_res.max(a.residual);
    }
    ensure(
        lin_err <= 1e-10 && same_ok && max_res <= RESIDUAL_TOLERANCE,
        format!("linear closed form max |Δ| {lin_err:.1e}; input = baseline gives zeros: {same_ok}; 50 examples at 256 steps max residual {max_res:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 10. determinism through the command line

const PIPELINE_CONFIG: &str = r#"
[synth]
train_per_lang = 80
dev_per_lang = 40
test_per_lang = 40
unlabeled_per_lang = 120

[backbone_mlm]
epochs = 1

[la_mlm]
epochs = 1

[train]
epochs = 2
"#;

/// Runs every command once under `root`; returns stage → artifact hashes.
fn pipeline(root: &Path) -> BTreeMap<String, BTreeMap<String, String>> {
    let config = root.join("pipeline.toml");
    fs::write(&config, PIPELINE_CONFIG).unwrap();
    let config = config.display().to_string();
    let mut stages = BTreeMap::new();
    let mut run = |name: &str, args: &[&str]| -> String {
        let out = root.join(name).display().to_string();
        let status = Command::new(env!("CARGO_BIN_EXE_wlfusion"))
            .args(args)
            .args(["--config", &config, "--out", &out])
            .output()
            .unwrap();
        assert!(status.status.success(), "{name} failed: {}", String::from_utf8_lossy(&status.stderr));
        stages.insert(name.to_string(), RunManifest::load(Path::new(&out)).unwrap().artifacts);
        out
    };
    let data = run("data", &["gen-synth"]);
    let bb = run("backbone", &["pretrain-backbone", "--data", &data]);
    let mut las = Vec::new();
    let mut tas = Vec::new();
    for l in ["en", "ar", "es"] {
        let la = run(&format!("la.{l}"), &["pretrain-la", "--backbone", &bb, "--data", &data, "--lang", l]);
        tas.push(run(&format!("ta.{l}"), &["train-ta", "--backbone", &bb, "--data", &data, "--lang", l, "--la", &la]));
        las.push(la);
    }
    let mut args = vec!["train-fusion", "--backbone", &bb, "--data", &data];
    for p in tas.iter().chain(&las) {
        args.extend([if tas.contains(p) { "--ta" } else { "--la" }, p.as_str()]);
    }
    let af = run("fusion", &args);
    let base = run(
        "baseline",
        &["train-baseline", "--backbone", &bb, "--data", &data, "--kind", "WL+TA", "--sources", "en,ar,es"],
    );
    let ev = run("evaluate", &["evaluate", "--model", &af, "--data", &data]);
    let ev_base = run("evaluate.baseline", &["evaluate", "--model", &base, "--data", &data]);
    run("interpret", &["interpret", "--model", &af, "--data", &data]);
    let topics = run("topics", &["topical-split", "--backbone", &bb, "--data", &data]);
    run("evaluate.local", &["evaluate", "--model", &af, "--data", &data, "--scope", "local", "--topical", &topics]);
    run("attribute", &["attribute", "--model", &tas[0], "--data", &data, "--lang", "bg", "--n", "5", "--steps", "64"]);
    let (p1, p2) = (format!("{ev}/predictions.tsv"), format!("{ev_base}/predictions.tsv"));
    run("report", &["report", "--model", &af, "--model", &tas[1], "--compare", &p1, &p2]);
    stages
}

fn criterion_10() -> Check {
    let start = Instant::now();
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let runs: Vec<_> = dirs.iter().map(|d| pipeline(d.path())).collect();
    let mut differing = Vec::new();
    let mut files = 0;
    for (stage, hashes) in &runs[0] {
        files += hashes.len();
        for other in &runs[1..] {
            if other.get(stage) != Some(hashes) {
                differing.push(stage.clone());
            }
        }
    }
    differing.dedup();
    ensure(
        differing.is_empty() && runs[0].len() >= 15,
        format!(
            "{} stages × 3 runs, {files} artifacts per run; differing stages: {}; {:.0}s",
            runs[0].len(),
            if differing.is_empty() { "none".to_string() } else { differing.join(", ") },
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 11] = [
        (1, "gradient correctness", criterion_1),
        (2, "frozen-weight contract", criterion_2),
        (3, "parameter efficiency", criterion_3),
        (4, "fusion identities", criterion_4),
        (5, "metric oracles", criterion_5),
        (6, "zero-shot transfer", criterion_6),
        (7, "topical split recovery", criterion_7),
        (8, "fusion interpretability", criterion_8),
        (9, "integrated-gradients completeness", criterion_9),
        (10, "determinism", criterion_10),
        (11, "kappa pipeline", criterion_11),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
