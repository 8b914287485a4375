use chrono::NaiveDate;
use dgdnn_core::evaluation::{metrics, Confusion};
use dgdnn_core::graph::{
    adjacency_from_features, entropy, joint_entropy, signal_energy, EdgeFeatures,
    EntropyEstimatorConfig, GraphConfig,
};
use dgdnn_core::market::{
    business_days, make_labels, make_window, synth_market, MarketHistory, StockUniverse,
    SyntheticMarketSpec,
};
use dgdnn_core::model::{forward, DiffusionStack, ModelConfig, ModelParams};
use dgdnn_core::numerics::{grad_check, Axis, Tape, Tensor, Var};
use dgdnn_core::Result;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Reduces `out` to a scalar through a fixed random weighting so every entry
/// gets a distinct upstream gradient.
fn weighted_total(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let [r, c] = tape.value(out).shape();
    let w = tape.constant(random_tensor(
        &mut ChaCha8Rng::seed_from_u64(seed),
        r,
        c,
        1.0,
    ));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn random_history(rng: &mut ChaCha8Rng, n: usize, m: usize, days: usize) -> MarketHistory {
    let names = ["open", "high", "low", "close", "volume"];
    let universe = StockUniverse {
        tickers: (0..n).map(|i| format!("T{i}")).collect(),
        indicator_names: names[5 - m..].iter().map(|s| s.to_string()).collect(),
        calendar: business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), days),
    };
    let values = (0..n * m * days)
        .map(|_| rng.random_range(1.0..100.0))
        .collect();
    MarketHistory::new(universe, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (rng.random_range(2..5), rng.random_range(2..5));
        let params = vec![
            random_tensor(&mut rng, n, k, 1.0),
            random_tensor(&mut rng, k, n, 1.0),
            random_tensor(&mut rng, n, n, 1.0),
            random_tensor(&mut rng, 1, n, 1.0),
            random_tensor(&mut rng, 1, 2, 1.0),
        ];
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let report = grad_check(
            |tape, v| {
                let ab = tape.matmul(v[0], v[1])?;
                let s = tape.add(ab, v[2])?;
                let d = tape.sub(s, v[2])?;
                let m = tape.mul(d, v[2])?;
                let den = tape.mul(v[2], v[2])?;
                let den = tape.add_scalar(den, 1.0);
                let q = tape.div(m, den)?;
                let q = tape.scale(q, 0.7);
                let r = tape.add_row(q, v[3])?;
                let t = tape.transpose(r);
                let sr = tape.softmax(t, Axis::Row);
                let sc = tape.softmax(r, Axis::Col);
                let lr = tape.leaky_relu(ab, 0.01);
                let w = tape.softmax(v[4], Axis::Row);
                let mix = tape.weighted_sum(w, &[sr, sc])?;
                let cat = tape.concat_cols(&[mix, lr])?;
                let sl = tape.slice_cols(cat, 1, n)?;
                let logits = tape.slice_cols(cat, 0, 2)?;
                let ce = tape.cross_entropy(logits, &labels)?;
                let tot = weighted_total(tape, sl, seed)?;
                tape.add(tot, ce)
            },
            &params,
            1e-6,
        )
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn backward_is_repeatable(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let a = tape.param(random_tensor(&mut rng, 3, 4, 2.0));
        let b = tape.param(random_tensor(&mut rng, 4, 3, 2.0));
        let ab = tape.matmul(a, b).unwrap();
        let s = tape.softmax(ab, Axis::Col);
        let out = weighted_total(&mut tape, s, seed).unwrap();
        let first = tape.backward(out).unwrap().params(&[a, b], &[[3, 4], [4, 3]]);
        let second = tape.backward(out).unwrap().params(&[a, b], &[[3, 4], [4, 3]]);
        prop_assert_eq!(first, second);
    }

    #[test]
    fn softmax_sums_to_one(values in prop::collection::vec(-1e3f64..1e3, 1..40), cols in 1usize..5) {
        let rows = values.len().div_ceil(cols);
        let mut data = values.clone();
        data.resize(rows * cols, 0.0);
        let t = Tensor::from_vec(rows, cols, data).unwrap();
        for s in t.softmax(Axis::Row).row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        for s in t.softmax(Axis::Col).col_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn entropy_bounds(
        pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..200),
        bins in 1usize..80,
    ) {
        let cfg = EntropyEstimatorConfig { bins };
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (sx, sy) = (entropy(&x, &cfg), entropy(&y, &cfg));
        let sxy = joint_entropy(&x, &y, &cfg).unwrap();
        prop_assert!(sx.max(sy) <= sxy + 1e-12);
        prop_assert!(sxy <= sx + sy + 1e-12);
        prop_assert!(sx >= 0.0 && sx <= (bins as f64).ln() + 1e-12);
    }

    #[test]
    fn adjacency_structure(seed in any::<u64>(), n in 2usize..8, width in 4usize..30, loops in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, n, width, 3.0);
        let cfg = GraphConfig { self_loops: loops, ..GraphConfig::default() };
        let a = adjacency_from_features(&x, &cfg).unwrap();
        let energy: Vec<f64> = (0..n).map(|i| signal_energy(x.row(i))).collect();
        for i in 0..n {
            prop_assert_eq!(a.get(i, i), if loops { 1.0 } else { 0.0 });
            for j in 0..n {
                prop_assert!(a.get(i, j) >= 0.0 && a.get(i, j).is_finite());
                if i != j {
                    // The entropy factor is symmetric; only the energy ratio flips.
                    let lhs = a.get(i, j) * energy[j] * energy[j];
                    let rhs = a.get(j, i) * energy[i] * energy[i];
                    prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1e-300));
                }
            }
        }
    }

    #[test]
    fn adjacency_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, n, 20, 3.0);
        let perm = permutation(&mut rng, n);
        let cfg = GraphConfig::default();
        let a = adjacency_from_features(&x, &cfg).unwrap();
        let ap = adjacency_from_features(&x.permute_rows(&perm), &cfg).unwrap();
        prop_assert_eq!(ap, a.permute_square(&perm));
    }

    #[test]
    fn model_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..6, decoupled in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { layers: 2, diffusion_steps: 3, heads: 2, embed_dim: 6, decoupled, ..ModelConfig::default() };
        let mut params = ModelParams::init(cfg, n, 8, seed).unwrap();
        // Non-uniform transitions so the permutation of T actually matters.
        for ls in params.layout.layers.clone() {
            for t in ls.transitions {
                params.tensors[t] = random_tensor(&mut rng, n, n, 2.0);
            }
        }
        let x = random_tensor(&mut rng, n, 8, 1.0);
        let a = random_tensor(&mut rng, n, n, 1.0).map(f64::abs);
        let perm = permutation(&mut rng, n);
        let out = forward(&x, &a, &params).unwrap();
        let out_p = forward(&x.permute_rows(&perm), &a.permute_square(&perm), &params.permute_nodes(&perm)).unwrap();
        prop_assert!(out_p.max_abs_diff(&out.permute_rows(&perm)) < 1e-10);
    }

    #[test]
    fn realized_diffusion_is_stochastic(seed in any::<u64>(), n in 1usize..7, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { layers: 2, diffusion_steps: k, heads: 1, embed_dim: 4, ..ModelConfig::default() };
        let mut params = ModelParams::init(cfg, n, 3, seed).unwrap();
        for ls in params.layout.layers.clone() {
            for t in ls.transitions {
                params.tensors[t] = random_tensor(&mut rng, n, n, 30.0);
            }
            if let Some(th) = ls.theta {
                params.tensors[th] = random_tensor(&mut rng, 1, k, 30.0);
            }
        }
        let stack = DiffusionStack::realize(&params).unwrap();
        for l in 0..2 {
            prop_assert!((stack.layers[l].theta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for s in stack.diffusion_matrix(l).col_sums() {
                prop_assert!((s - 1.0).abs() <= 1e-10);
            }
            let r = stack.radius(l);
            prop_assert!((0.0..=(k - 1) as f64 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn window_blocks_are_standardized(seed in any::<u64>(), lookback in 2usize..25, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut history = random_history(&mut rng, 3, m, 40);
        // One constant block.
        history.series_mut(1, 0).fill(7.5);
        let t = rng.random_range(lookback - 1..40);
        let w = make_window(&history, t, lookback).unwrap();
        for i in 0..3 {
            for ind in 0..m {
                let block = &w.features.row(i)[ind * lookback..(ind + 1) * lookback];
                if i == 1 && ind == 0 {
                    prop_assert!(block.iter().all(|&v| v == 0.0));
                    continue;
                }
                let mean = block.iter().sum::<f64>() / lookback as f64;
                let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (lookback - 1) as f64;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((0.999..=1.001).contains(&var.sqrt()));
                let raw = &w.raw.row(i)[ind * lookback..(ind + 1) * lookback];
                prop_assert_eq!(raw, &history.series(i, ind)[t + 1 - lookback..=t]);
            }
        }
    }

    #[test]
    fn windows_do_not_look_ahead(seed in any::<u64>(), lookback in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = random_history(&mut rng, 3, 5, 30);
        let t = rng.random_range(lookback.max(2) - 1..29);
        let mut future = history.clone();
        for i in 0..3 {
            for ind in 0..5 {
                for v in &mut future.series_mut(i, ind)[t + 1..] {
                    *v *= 3.0;
                }
            }
        }
        prop_assert_eq!(make_window(&history, t, lookback).unwrap(), make_window(&future, t, lookback).unwrap());
        prop_assert_eq!(make_labels(&history, t - 1).unwrap(), make_labels(&future, t - 1).unwrap());
    }

    #[test]
    fn metrics_match_recount_and_ignore_order(seed in any::<u64>(), len in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        let labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        let r = metrics(&pred, &labels).unwrap();
        let count = |p: u8, y: u8| pred.iter().zip(&labels).filter(|&(&a, &b)| a == p && b == y).count() as u64;
        prop_assert_eq!(r.confusion, Confusion::from_counts(count(1, 1), count(1, 0), count(0, 0), count(0, 1)));
        prop_assert!((-1.0..=1.0).contains(&r.mcc));
        prop_assert!((0.0..=1.0).contains(&r.acc) && (0.0..=1.0).contains(&r.f1) && (0.0..=1.0).contains(&r.macro_f1));
        let perm = permutation(&mut rng, len);
        let p2: Vec<u8> = perm.iter().map(|&i| pred[i]).collect();
        let y2: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(metrics(&p2, &y2).unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn random_walk_labels_are_balanced(seed in any::<u64>()) {
        let spec = SyntheticMarketSpec::lead_lag(4, 1001, 0, 1, 0.9, 0.15, seed);
        let history = synth_market(&spec).unwrap().history;
        let ups: usize = (0..1000).map(|t| make_labels(&history, t).unwrap().labels.iter().filter(|&&c| c == 1).count()).sum();
        let share = ups as f64 / 4000.0;
        prop_assert!((0.45..=0.55).contains(&share), "up share {share}");
    }

    #[test]
    fn normalized_edges_are_scale_free(seed in any::<u64>()) {
        let spec = SyntheticMarketSpec::lead_lag(5, 40, 2, 1, 0.9, 0.15, seed);
        let history = synth_market(&spec).unwrap().history;
        let w = make_window(&history, 30, 20).unwrap();
        let cfg = GraphConfig { edge_features: EdgeFeatures::Normalized, ..GraphConfig::default() };
        let mut scaled = history.clone();
        for ind in 0..5 {
            for v in scaled.series_mut(2, ind) {
                *v *= 1000.0;
            }
        }
        let ws = make_window(&scaled, 30, 20).unwrap();
        let a = adjacency_from_features(&w.features, &cfg).unwrap();
        let b = adjacency_from_features(&ws.features, &cfg).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-9 * a.data().iter().fold(1.0f64, |m, v| m.max(v.abs())));
    }
}
