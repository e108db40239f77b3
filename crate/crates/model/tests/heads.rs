mod common;

use factorspan_core::schema::Label;
use factorspan_model::autodiff::{GradStore, Graph, Mat, ParamStore};
use factorspan_model::heads::{decode_runs, Model, ModelKind, SpanSelection};
use factorspan_model::nms::nms_decode;
use factorspan_model::optim::{AdamW, AdamWConfig};
use proptest::prelude::*;

/// Top-n by repeated linear scans for the largest remaining value.
fn brute_top(values: &[f64], n: usize) -> Vec<usize> {
    let mut taken = vec![false; values.len()];
    let mut out = Vec::new();
    for _ in 0..n.min(values.len()) {
        let mut best: Option<usize> = None;
        for i in 0..values.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| values[i] > values[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out.sort();
    out
}

fn brute_nms(starts: &[f64], ends: &[f64], n: usize) -> Vec<(usize, usize)> {
    let s = brute_top(starts, n);
    let e = brute_top(ends, n);
    let mut out: Vec<(usize, usize)> = Vec::new();
    for i in 0..s.len() {
        let end_incl = if e[i] < s[i] { s[i] } else { e[i] };
        let mut end = end_incl + 1;
        if i + 1 < s.len() && s[i + 1] < end {
            end = s[i + 1];
        }
        out.push((s[i], end));
    }
    out
}

fn probs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    // A coarse grid makes ties common.
    prop::collection::vec((0u8..20).prop_map(|k| k as f64 / 20.0), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn nms_matches_brute_force((s, e, n) in (1usize..30).prop_flat_map(|l| (probs(l), probs(l), 0usize..=8))) {
        let got = nms_decode(&s, &e, n);
        prop_assert_eq!(&got, &brute_nms(&s, &e, n));
        prop_assert_eq!(got.len(), n.min(s.len()));
        for &(a, b) in &got {
            prop_assert!(a < b && b <= s.len());
        }
        for w in got.windows(2) {
            prop_assert!(w[0].1 <= w[1].0);
        }
    }

    #[test]
    fn constant_tagging_is_one_span(len in 1usize..64, label in 1usize..20) {
        prop_assert_eq!(decode_runs(&vec![label; len], 0), vec![(0, len, label)]);
    }

    #[test]
    fn runs_partition_non_sentinel_tokens(tags in prop::collection::vec(0usize..4, 0..40)) {
        let runs = decode_runs(&tags, 0);
        let mut covered = vec![0usize; tags.len()];
        for &(s, e, l) in &runs {
            for i in s..e {
                prop_assert_eq!(tags[i], l);
                covered[i] += 1;
            }
        }
        for (i, &t) in tags.iter().enumerate() {
            prop_assert_eq!(covered[i], usize::from(t != 0));
        }
    }

    #[test]
    fn max_pool_ignores_span_order(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 1..6), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let store = ParamStore::new();
        let pool = |order: &[usize]| {
            let mut g = Graph::new(&store);
            let parts: Vec<_> = order
                .iter()
                .map(|&i| {
                    let v = g.constant(Mat::from_shape_vec((1, 5), rows[i].clone()).unwrap());
                    g.softmax(v)
                })
                .collect();
            let all = g.concat_rows(&parts);
            let m = g.max_rows(all);
            g.value(m).clone()
        };
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let base = pool(&order);
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(base, pool(&order));
    }
}

fn span_setup(seed: u64) -> (factorspan_model::Checkpoint, factorspan_model::trainer::Dataset) {
    common::setup(ModelKind::Span, 32, seed)
}

#[test]
fn permuting_frozen_spans_keeps_the_loss() {
    let (ck, data) = span_setup(3);
    let m: &Model = &ck.model;
    for ex in &data.examples {
        let mut g = Graph::new(&ck.store);
        let (_, _, out) = m.span_training_output(&mut g, ex, None, None).unwrap();
        let sel = out.selection();
        if sel.spans.len() < 2 {
            continue;
        }
        let base = {
            let mut g = Graph::new(&ck.store);
            let (l, _) = m.loss_with_selection(&mut g, ex, None, None, Some(&sel)).unwrap();
            g.scalar(l)
        };
        let k = sel.spans.len();
        let perm: Vec<usize> = (0..k).rev().collect();
        let mut inverse = vec![0; k];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let shuffled = SpanSelection {
            spans: perm.iter().map(|&i| sel.spans[i]).collect(),
            pool_winners: sel.pool_winners.iter().map(|&w| inverse[w]).collect(),
        };
        let mut g = Graph::new(&ck.store);
        let (l, _) = m.loss_with_selection(&mut g, ex, None, None, Some(&shuffled)).unwrap();
        let permuted = g.scalar(l);
        assert_eq!(base, permuted);
    }
}

#[test]
fn count_zero_means_sentinel_only() {
    let (mut ck, data) = span_setup(5);
    let bias = ck.store.id("head.span.count.bias").unwrap();
    ck.store.get_mut(bias)[[0, 0]] = 50.0;
    for (s, ex) in data.sentences.iter().zip(&data.examples) {
        let raw = ck.model.predict(&ck.store, &ex.encoding).unwrap();
        assert!(raw.spans.is_empty() && raw.labels.is_empty());
        let p = raw.to_prediction(s.key(), &ex.encoding);
        assert_eq!(p.label_set(0.0), [Label::NoAnnotation].into());
    }
}

#[test]
fn empty_selection_loss_is_finite_and_has_gradients() {
    let (ck, data) = span_setup(7);
    let ex = data.examples.iter().find(|e| e.span_count > 0).unwrap();
    let c = ck.model.labels().len();
    let empty = SpanSelection { spans: vec![], pool_winners: vec![] };
    let mut g = Graph::new(&ck.store);
    let (loss, parts) = ck.model.loss_with_selection(&mut g, ex, None, None, Some(&empty)).unwrap();
    assert!(parts.total.is_finite());
    // The all-zero pooled vector is clamped to eps: positives cost −ln(eps),
    // negatives −ln(1 − eps).
    let positives: f64 = ex.multilabel.iter().sum();
    let eps = 1e-7f64;
    let want = (positives * -eps.ln() - (c as f64 - positives) * (-eps).ln_1p()) / c as f64;
    assert!((parts.label - want).abs() <= 1e-9 * want, "{} vs {want}", parts.label);

    let mut grads = GradStore::new(&ck.store);
    g.backward(loss, &mut grads, 1.0);
    for name in ["head.span.start.weight", "head.span.end.weight", "head.span.count.weight", "encoder.layer0.ffn.out.weight"] {
        let id = ck.store.id(name).unwrap();
        assert!(grads.get(id).iter().any(|&v| v != 0.0), "{name} received no gradient");
        assert!(grads.get(id).iter().all(|v| v.is_finite()));
    }
    let label = ck.store.id("head.span.label.weight").unwrap();
    assert!(grads.get(label).iter().all(|&v| v == 0.0));

    // Central differences on a few count-head entries.
    let id = ck.store.id("head.span.count.weight").unwrap();
    let mut store = ck.store.clone();
    for k in [0, 5, 17, 40] {
        let at = |store: &mut ParamStore, off: f64| {
            let orig = store.get(id).as_slice().unwrap()[k];
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig + off;
            let mut g = Graph::new(store);
            let (l, _) = ck.model.loss_with_selection(&mut g, ex, None, None, Some(&empty)).unwrap();
            let v = g.scalar(l);
            store.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            v
        };
        let h = 1e-5;
        let numeric = (at(&mut store, h) - at(&mut store, -h)) / (2.0 * h);
        let analytic = grads.get(id).as_slice().unwrap()[k];
        assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3), "{k}: {analytic} vs {numeric}");
    }
}

#[test]
fn overfitting_one_example_lowers_the_loss_every_step() {
    let (mut ck, data) = span_setup(9);
    let ex = &data.examples[1];
    let cfg = AdamWConfig { lr: 1e-4, weight_decay: 0.0, ..AdamWConfig::default() };
    let mut opt = AdamW::new(cfg, &ck.store);
    let mut losses = Vec::new();
    for _ in 0..50 {
        let mut grads = GradStore::new(&ck.store);
        let loss = {
            let mut g = Graph::new(&ck.store);
            let (loss, parts) = ck.model.loss(&mut g, ex, None, None).unwrap();
            g.backward(loss, &mut grads, 1.0);
            parts.total
        };
        losses.push(loss);
        opt.step(&mut ck.store, &grads);
    }
    for (i, w) in losses.windows(2).enumerate() {
        assert!(w[1] < w[0], "step {}: {} -> {}", i + 1, w[0], w[1]);
    }
    assert!(losses[49] < 0.9 * losses[0], "{losses:?}");
}
