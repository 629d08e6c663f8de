mod common;

use common::cases::{composite_cases, network_check, primitive_cases, tiny_model};
use common::{max_abs_diff, naive_attention, naive_conv1d, naive_linear, randn, rng};
use earsense::numerics::{multi_head_attention, AttentionWeights, RunningStats, Tape, Tensor, BATCH_NORM_EPS, LAYER_NORM_EPS};
use proptest::prelude::*;

fn conv(x: Tensor<f64>, w: Tensor<f64>, b: Option<Tensor<f64>>) -> Vec<f64> {
    let mut t = Tape::new();
    let (x, w) = (t.constant(x), t.constant(w));
    let b = b.map(|b| t.constant(b));
    let y = t.conv1d(x, w, b).unwrap();
    t.value(y).data().to_vec()
}

#[test]
fn conv_identity_and_delta_kernels() {
    let x = Tensor::new(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let id = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
    assert_eq!(conv(x, id, Some(Tensor::zeros(&[1]))), [1.0, 2.0, 3.0]);
    let x = Tensor::new(&[1, 1, 3], vec![4.0, 5.0, 6.0]).unwrap();
    let delta = Tensor::new(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(conv(x, delta, None), [4.0, 5.0, 6.0]);
}

#[test]
fn conv_matches_direct_summation() {
    let r = &mut rng(1);
    for _ in 0..10 {
        let (x, w, b) = (randn(r, &[1, 2, 8]), randn(r, &[3, 2, 3]), randn(r, &[3]));
        let want = naive_conv1d(x.data(), 1, 2, 8, w.data(), 3, 3, Some(b.data()));
        assert!(max_abs_diff(&conv(x, w, Some(b)), &want) < 1e-12);
    }
    let (x, w) = (randn(r, &[3, 5, 11]), randn(r, &[4, 5, 5]));
    let want = naive_conv1d(x.data(), 3, 5, 11, w.data(), 4, 5, None);
    assert!(max_abs_diff(&conv(x, w, None), &want) < 1e-12);
}

fn batch_norm(x: Tensor<f64>, gamma: Tensor<f64>, beta: Tensor<f64>) -> Vec<f64> {
    let ch = gamma.len();
    let mut t = Tape::new();
    let (x, g, b) = (t.constant(x), t.constant(gamma), t.constant(beta));
    let mut st = RunningStats::new(ch);
    let y = t.batch_norm(x, g, b, &mut st, true).unwrap();
    t.value(y).data().to_vec()
}

#[test]
fn batch_norm_of_standardized_input() {
    // [B=2, C=2, L=2]; each channel holds {1, -1, 1, -1} or {2, 0, 0, -2}/sqrt(2)
    let s = 2f64.sqrt();
    let x = vec![1.0, -1.0, 2.0 / s, 0.0, 1.0, -1.0, 0.0, -2.0 / s];
    let y = batch_norm(Tensor::new(&[2, 2, 2], x.clone()).unwrap(), Tensor::ones(&[2]), Tensor::zeros(&[2]));
    let shrink = 1.0 / (1.0 + BATCH_NORM_EPS).sqrt();
    let exact: Vec<f64> = x.iter().map(|v| v * shrink).collect();
    assert!(max_abs_diff(&y, &exact) < 1e-12);
    assert!(max_abs_diff(&y, &x) < 1e-5);
}

#[test]
fn batch_norm_constant_channel_gives_beta() {
    let x = Tensor::full(&[3, 2, 4], 7.5);
    let beta = Tensor::new(&[2], vec![0.25, -1.0]).unwrap();
    let y = batch_norm(x, Tensor::new(&[2], vec![3.0, 2.0]).unwrap(), beta);
    for (i, v) in y.iter().enumerate() {
        assert_eq!(*v, if (i / 4) % 2 == 0 { 0.25 } else { -1.0 });
    }
}

#[test]
fn batch_norm_output_statistics() {
    let r = &mut rng(2);
    let x = randn(r, &[4, 3, 9]).map(|v| 3.0 * v + 1.5);
    let y = batch_norm(x.clone(), Tensor::ones(&[3]), Tensor::zeros(&[3]));
    let channel = |data: &[f64], c: usize| -> Vec<f64> {
        (0..4).flat_map(|b| data[(b * 3 + c) * 9..(b * 3 + c + 1) * 9].to_vec()).collect()
    };
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n)
    };
    for c in 0..3 {
        let (_, var_x) = stats(&channel(x.data(), c));
        let (mean, var) = stats(&channel(&y, c));
        assert!(mean.abs() < 1e-10);
        assert!((var - var_x / (var_x + BATCH_NORM_EPS)).abs() < 1e-10, "variance {var}");
        assert!((var - 1.0).abs() < 1e-5);
    }
}

fn layer_norm(x: Tensor<f64>) -> Vec<f64> {
    let d = *x.shape().last().unwrap();
    let mut t = Tape::new();
    let (x, g, b) = (t.constant(x), t.constant(Tensor::ones(&[d])), t.constant(Tensor::zeros(&[d])));
    let y = t.layer_norm(x, g, b).unwrap();
    t.value(y).data().to_vec()
}

#[test]
fn layer_norm_cases() {
    assert_eq!(layer_norm(Tensor::new(&[1, 4], vec![1.0; 4]).unwrap()), [0.0; 4]);
    let y = layer_norm(Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap());
    let s = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
    assert!(max_abs_diff(&y, &[s, -s]) < 1e-15);
    assert!(max_abs_diff(&y, &[1.0, -1.0]) < 1e-5);
    let y = layer_norm(randn(&mut rng(3), &[10, 512]).map(|v| 4.0 * v - 2.0));
    for row in y.chunks(512) {
        assert!((row.iter().sum::<f64>() / 512.0).abs() < 1e-10);
    }
}

struct Mha {
    x: Tensor<f64>,
    w: Vec<Tensor<f64>>,
}

impl Mha {
    fn random(seed: u64, t: usize, d: usize) -> Mha {
        let r = &mut rng(seed);
        let s = 1.0 / (d as f64).sqrt();
        Mha {
            x: randn(r, &[t, d]),
            w: (0..4).flat_map(|_| [randn(r, &[d, d]).map(|v| v * s), randn(r, &[d])]).collect(),
        }
    }

    fn run(&self, heads: usize) -> (Vec<f64>, Vec<f64>) {
        let mut t = Tape::new();
        let x = t.constant(self.x.clone());
        let v: Vec<_> = self.w.iter().map(|w| t.constant(w.clone())).collect();
        let w = AttentionWeights {
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
            wo: v[6],
            bo: v[7],
        };
        let (y, a) = multi_head_attention(&mut t, x, &w, 1, heads).unwrap();
        (t.value(y).data().to_vec(), t.attention_probs(a).unwrap().to_vec())
    }

    fn naive(&self, heads: usize) -> Vec<f64> {
        let (t, d) = (self.x.shape()[0], self.x.shape()[1]);
        let lin = |i: usize, x: &[f64]| naive_linear(x, t, d, self.w[2 * i].data(), d, self.w[2 * i + 1].data());
        let (q, k, v) = (lin(0, self.x.data()), lin(1, self.x.data()), lin(2, self.x.data()));
        lin(3, &naive_attention(&q, &k, &v, t, d, heads))
    }
}

#[test]
fn attention_matches_naive_loops() {
    let m = Mha::random(4, 10, 512);
    assert!(max_abs_diff(&m.run(4).0, &m.naive(4)) < 1e-10);
}

#[test]
fn single_token_attends_to_itself() {
    let m = Mha::random(5, 1, 8);
    let (y, probs) = m.run(2);
    assert!(probs.iter().all(|&p| p == 1.0));
    // output projection of the value projection
    let v = naive_linear(m.x.data(), 1, 8, m.w[4].data(), 8, m.w[5].data());
    let want = naive_linear(&v, 1, 8, m.w[6].data(), 8, m.w[7].data());
    assert!(max_abs_diff(&y, &want) < 1e-12);
}

#[test]
fn identical_tokens_attend_uniformly() {
    let mut m = Mha::random(6, 5, 8);
    let row = m.x.data()[..8].to_vec();
    m.x = Tensor::from_fn(&[5, 8], |i| row[i % 8]);
    let (_, probs) = m.run(2);
    assert!(probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn primitive_gradients_match_finite_differences() {
    for seed in 0..3 {
        for c in primitive_cases(seed).iter().chain(&composite_cases(seed)) {
            for (i, g) in c.check(seed).into_iter().enumerate() {
                assert!(g.rel_err < 1e-4, "{} operand {i} seed {seed}: {g:?}", c.name);
                assert_eq!(g.kinks, 0, "{} operand {i} seed {seed}", c.name);
            }
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let checks = network_check(&tiny_model(), 1, 2, None);
    let (checked, kinks) = checks.iter().fold((0, 0), |(c, k), (_, g)| (c + g.checked, k + g.kinks));
    assert!(kinks * 10 <= checked, "{kinks} kinks against {checked} checked coordinates");
    for (name, g) in checks {
        assert!(g.rel_err < 1e-4, "{name}: {g:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear_in_the_input(seed in 0u64..10_000, a in -3.0f64..3.0) {
        let r = &mut rng(seed);
        let (x1, x2, w) = (randn(r, &[1, 3, 6]), randn(r, &[1, 3, 6]), randn(r, &[2, 3, 3]));
        let mix = Tensor::from_fn(&[1, 3, 6], |i| a * x1.data()[i] + x2.data()[i]);
        let lhs = conv(mix, w.clone(), None);
        let (y1, y2) = (conv(x1, w.clone(), None), conv(x2, w, None));
        let rhs: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + q).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..10_000, t in 1usize..8) {
        let m = Mha::random(seed, t, 8);
        let (_, probs) = m.run(4);
        for row in probs.chunks(t) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}

