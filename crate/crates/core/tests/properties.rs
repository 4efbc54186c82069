//! Property tests for the invariants every module promises.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use replay_core::autodiff::{decode_checkpoint, encode_checkpoint, Graph, ParamStore};
use replay_core::dsp::{extract_segments, fit_to_frames, ms_to_samples, AudioClip, MelAnalyzer, MelSpectrogram, SegmentSet};
use replay_core::loss::{rank_loss, rank_loss_value};
use replay_core::metrics::{compute_metrics, one_hot_labels};
use replay_core::slots::{saliency_diagonal, select_segments, SlotAttention, SlotInit};
use replay_core::{Matrix, ModelConfig, SelectionConfig};

fn matrix(max_rows: usize, max_cols: usize, range: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(r, c)| {
        proptest::collection::vec(-range..range, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

fn value_of(f: impl FnOnce(&mut Graph<'_>) -> replay_core::autodiff::Var) -> Matrix {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let v = f(&mut g);
    g.value(v).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_row_shifts(m in matrix(6, 8, 30.0), shift in -50.0..50.0f64) {
        let s = value_of(|g| { let x = g.constant(m.clone()); g.softmax(x, 1).unwrap() });
        for r in 0..s.rows() {
            let sum: f64 = (0..s.cols()).map(|c| s.get(r, c)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        let shifted = value_of(|g| { let x = g.constant(m.map(|v| v + shift)); g.softmax(x, 1).unwrap() });
        for (a, b) in s.as_slice().iter().zip(shifted.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_ignores_scalar_shifts(m in matrix(5, 8, 10.0), shift in -100.0..100.0f64) {
        prop_assume!(m.cols() > 1);
        let a = value_of(|g| { let x = g.constant(m.clone()); g.layer_norm(x) });
        let b = value_of(|g| { let x = g.constant(m.map(|v| v + shift)); g.layer_norm(x) });
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    /// Gradients through a shared node equal those of the same function
    /// written as a tree with the shared part recomputed.
    #[test]
    fn shared_subexpressions_accumulate(m in matrix(4, 4, 2.0)) {
        let mut store = ParamStore::new();
        let x = store.add("x", m.clone());
        let grad = |shared: bool| {
            let mut g = Graph::new(&store);
            let xv = g.param(x);
            let mut node = || { let t = g.tanh(xv); g.mul(t, xv).unwrap() };
            let (a, b) = if shared { let a = node(); (a, a) } else { (node(), node()) };
            let prod = g.mul(a, b).unwrap();
            let sum = g.add(prod, a).unwrap();
            let y = g.add(sum, b).unwrap();
            let out = g.sum(y);
            g.backward(out).unwrap().param_grads(&g).get(x).clone()
        };
        let (dag, tree) = (grad(true), grad(false));
        for (a, b) in dag.as_slice().iter().zip(tree.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn selection_invariants(
        curve in proptest::collection::vec(0.0..1.0f64, 1..80),
        frames in 10usize..400,
        hop in prop_oneof![Just(10.0), Just(9.0), Just(8.0), Just(7.0)],
    ) {
        let cfg = SelectionConfig::default();
        let segs = select_segments(&curve, frames, hop, &cfg).unwrap();
        let duration = frames as f64 * hop / 1000.0;
        prop_assert!(!segs.is_empty());
        let iv = segs.intervals();
        for w in iv.windows(2) {
            prop_assert!(w[0].1 < w[1].0, "sorted and disjoint: {:?}", iv);
        }
        for &(a, b) in iv {
            prop_assert!(0.0 <= a && a < b && b <= duration + 1e-9, "{:?} in {}", (a, b), duration);
        }
        prop_assert!(segs.total_duration() + 1e-9 >= cfg.min_select_s.min(duration));
    }

    #[test]
    fn saliency_matrix_is_row_stochastic(values in proptest::collection::vec(-3.0..3.0f64, 2..24)) {
        let d = values.len() / 2;
        let slots = Matrix::from_vec(2, d, values[..2 * d].to_vec()).unwrap();
        let s = saliency_diagonal(&slots, 1e-4).unwrap();
        for r in 0..d {
            let sum: f64 = (0..d).map(|c| s.m.get(r, c)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        prop_assert!(s.curve.iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn cross_slot_weights_sum_to_one(seed in 0u64..1000, tokens in 1usize..12) {
        let cfg = ModelConfig { width: 8, slot_dim: 6, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let sa = SlotAttention::new(&mut store, &cfg, &mut rng);
        let z = replay_core::nn::gaussian(tokens, cfg.width, 2.0, &mut rng);
        let mut g = Graph::new(&store);
        let zv = g.constant(z);
        let run = sa.run(&mut g, zv, SlotInit::Train(&mut rng)).unwrap();
        for it in &run.iterations {
            let w = g.value(it.weights);
            for t in 0..w.rows() {
                prop_assert!((w.get(t, 0) + w.get(t, 1) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fit_to_frames_stays_within_row_range(m in matrix(4, 40, 5.0), target in 1usize..120) {
        let spec = MelSpectrogram { values: m.clone(), hop_ms: 10.0 };
        let fitted = fit_to_frames(&spec, target).unwrap();
        prop_assert_eq!(fitted.frames(), target);
        for r in 0..m.rows() {
            let lo = (0..m.cols()).map(|c| m.get(r, c)).fold(f64::INFINITY, f64::min);
            let hi = (0..m.cols()).map(|c| m.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
            for c in 0..target {
                let v = fitted.values.get(r, c);
                prop_assert!(lo - 1e-12 <= v && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn extracted_length_is_the_sum_of_spans(cuts in proptest::collection::btree_set(1usize..199, 2..8)) {
        let sr = 1000;
        let clip = AudioClip::new((0..2000).map(|i| (i as f64 / 2000.0) - 0.5).collect(), sr).unwrap();
        let cuts: Vec<f64> = cuts.into_iter().map(|c| c as f64 / 100.0).collect();
        let intervals: Vec<(f64, f64)> = cuts.chunks_exact(2).map(|w| (w[0], w[1])).collect();
        prop_assume!(!intervals.is_empty());
        let segs = SegmentSet::new(intervals.clone()).unwrap();
        let out = extract_segments(&clip, &segs).unwrap();
        let expected: usize = intervals
            .iter()
            .map(|&(a, b)| ms_to_samples(b * 1000.0, sr) - ms_to_samples(a * 1000.0, sr))
            .sum();
        prop_assert_eq!(out.len(), expected);
    }

    #[test]
    fn frame_count_is_ceil_of_len_over_hop(len in 200usize..20_000, hop in prop_oneof![Just(10.0), Just(9.0), Just(8.0), Just(7.0)]) {
        let an = MelAnalyzer::new(16_000, 8, 25.0, 512, 1e-6).unwrap();
        let hop_samples = ms_to_samples(hop, 16_000);
        prop_assert_eq!(an.frame_count(len, hop).unwrap(), len.div_ceil(hop_samples));
    }

    /// Shorter hops never give fewer frames on the same clip.
    #[test]
    fn finer_hops_give_more_frames(len in 400usize..20_000) {
        let an = MelAnalyzer::new(16_000, 8, 25.0, 512, 1e-6).unwrap();
        let counts: Vec<usize> = [10.0, 9.0, 8.0, 7.0].iter().map(|&h| an.frame_count(len, h).unwrap()).collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rank_loss_sign_and_zero_set(p in proptest::collection::vec(0.0..1.0f64, 2..7), gamma in 0.0..0.2f64) {
        let i = p.len();
        let v = rank_loss_value(&p, i, gamma).unwrap();
        prop_assert!(v >= 0.0);
        let satisfied = p[..i - 1].iter().all(|&pm| p[i - 1] >= pm + gamma);
        prop_assert_eq!(v == 0.0, satisfied);

        // Raising the current pass never hurts: d loss / d p_i <= 0.
        let mut store = ParamStore::new();
        let ids: Vec<_> = p.iter().enumerate().map(|(k, &x)| store.add(format!("p{k}"), Matrix::scalar(x))).collect();
        let mut g = Graph::new(&store);
        let vars: Vec<_> = ids.iter().map(|&id| g.param(id)).collect();
        let loss = rank_loss(&mut g, &vars, i, gamma).unwrap();
        prop_assert!((g.scalar(loss) - v).abs() < 1e-12);
        let grads = g.backward(loss).unwrap().param_grads(&g);
        prop_assert!(grads.get(ids[i - 1]).as_slice()[0] <= 0.0);
        for &id in &ids[..i - 1] {
            prop_assert!(grads.get(id).as_slice()[0] >= 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip(mats in proptest::collection::vec(matrix(5, 5, 1e6), 0..6)) {
        let mut store = ParamStore::new();
        for (k, m) in mats.iter().enumerate() {
            store.add(format!("layer{k}.w"), m.clone());
        }
        let bytes = encode_checkpoint(&store);
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.len(), store.len());
        for (id, name, value) in store.iter() {
            let other = back.find(name).unwrap();
            prop_assert_eq!(back.value(other), value);
            prop_assert_eq!(back.name(other), store.name(id));
        }
        prop_assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn metric_ranges(scores in proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, 6), 1..40), seed in 0usize..100) {
        let labels: Vec<usize> = (0..scores.len()).map(|i| (i * 7 + seed) % 6).collect();
        let r = compute_metrics(&scores, &one_hot_labels(&labels, 6)).unwrap();
        prop_assert!(0.0 <= r.top1 && r.top1 <= r.top5 && r.top5 <= 100.0);
        prop_assert!((0.0..=1.0).contains(&r.map));
        prop_assert!((0.0..=1.0).contains(&r.auc));
        prop_assert!(r.d_prime.is_finite());
    }
}
