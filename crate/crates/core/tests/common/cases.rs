//! Gradient-check cases: one per tape primitive plus the compositions used
//! by the model.

use earsense::model::{wing_loss, BnMode, ForwardOptions, ModelConfig, Network, WingParams};
use earsense::numerics::{dropout_mask, multi_head_attention, AttentionWeights, RunningStats, Tape, Tensor, Unary, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gradient_check, randn, rng, GradCheck};

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

pub struct Case {
    pub name: &'static str,
    pub leaves: Vec<Tensor<f64>>,
    pub build: Build,
}

impl Case {
    pub fn check(&self, seed: u64) -> Vec<GradCheck> {
        gradient_check(&self.leaves, None, seed, &*self.build)
    }
}

fn case(name: &'static str, leaves: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static) -> Case {
    Case {
        name,
        leaves,
        build: Box::new(build),
    }
}

/// Moves values at least `margin` away from zero, keeping their sign.
fn away_from_zero(t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    t.map(|v| if v >= 0.0 { v + margin } else { v - margin })
}

/// Distances on both sides of the Wing threshold plus either branch's interior.
fn wing_arguments(r: &mut ChaCha8Rng, w: f64, n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n], |i| {
        let mag = match i % 4 {
            0 => w - 1e-3,
            1 => w + 1e-3,
            2 => r.gen_range(0.1..w - 0.1),
            _ => r.gen_range(w + 0.1..2.0 * w),
        };
        if r.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Every tape primitive with random operands drawn from `seed`.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let r = &mut rng(seed);
    let wing = WingParams::default();
    let mask: Vec<f64> = dropout_mask(r, 12, 0.3);
    let stats = RunningStats {
        mean: randn(r, &[2]),
        var: randn(r, &[2]).map(|v| 0.5 + v * v),
    };
    let mut out = vec![
        case("matmul", vec![randn(r, &[3, 4]), randn(r, &[4, 5])], |t, v| t.matmul(v[0], v[1]).unwrap()),
        case("linear", vec![randn(r, &[3, 4]), randn(r, &[4, 5]), randn(r, &[5])], |t, v| {
            t.linear(v[0], v[1], Some(v[2])).unwrap()
        }),
        case("add", vec![randn(r, &[2, 3]), randn(r, &[2, 3])], |t, v| t.add(v[0], v[1]).unwrap()),
        case("sub", vec![randn(r, &[2, 3]), randn(r, &[2, 3])], |t, v| t.sub(v[0], v[1]).unwrap()),
        case("mul", vec![randn(r, &[2, 3]), randn(r, &[2, 3])], |t, v| t.mul(v[0], v[1]).unwrap()),
        case("add_tiled", vec![randn(r, &[4, 6]), randn(r, &[2, 6])], |t, v| t.add_tiled(v[0], v[1]).unwrap()),
        case("scale", vec![randn(r, &[3, 2])], |t, v| t.scale(v[0], 0.7)),
        case("mul_scalar", vec![randn(r, &[3, 2]), randn(r, &[1])], |t, v| t.mul_scalar(v[0], v[1]).unwrap()),
        case("sin", vec![randn(r, &[5])], |t, v| t.unary(v[0], Unary::Sin)),
        case("cos", vec![randn(r, &[5])], |t, v| t.unary(v[0], Unary::Cos)),
        case("square", vec![randn(r, &[5])], |t, v| t.unary(v[0], Unary::Square)),
        case("relu", vec![away_from_zero(randn(r, &[8]), 0.05)], |t, v| t.relu(v[0])),
        case("wing", vec![wing_arguments(r, wing.w, 16)], move |t, v| {
            t.unary(v[0], Unary::Wing { w: wing.w, eps: wing.epsilon })
        }),
        case("sum", vec![randn(r, &[2, 3])], |t, v| t.sum(v[0])),
        case("mean", vec![randn(r, &[2, 3])], |t, v| t.mean(v[0])),
        case("dot", vec![randn(r, &[4]), randn(r, &[4])], |t, v| t.dot(v[0], v[1]).unwrap()),
        case("reshape", vec![randn(r, &[2, 6])], |t, v| t.reshape(v[0], &[3, 4]).unwrap()),
        case("swap_last2", vec![randn(r, &[2, 3, 4])], |t, v| t.swap_last2(v[0]).unwrap()),
        case("conv1d", vec![randn(r, &[2, 3, 7]), randn(r, &[4, 3, 3]), randn(r, &[4])], |t, v| {
            t.conv1d(v[0], v[1], Some(v[2])).unwrap()
        }),
        case("layer_norm", vec![randn(r, &[4, 6]), randn(r, &[6]), randn(r, &[6])], |t, v| {
            t.layer_norm(v[0], v[1], v[2]).unwrap()
        }),
        case("dropout", vec![randn(r, &[3, 4])], move |t, v| t.dropout(v[0], mask.clone()).unwrap()),
        case("attention", vec![randn(r, &[6, 4]), randn(r, &[6, 4]), randn(r, &[6, 4])], |t, v| {
            t.attention(v[0], v[1], v[2], 2, 2).unwrap()
        }),
        case("select_rows", vec![randn(r, &[5, 3])], |t, v| t.select_rows(v[0], vec![4, 0, 4]).unwrap()),
        case("point_norm", vec![away_from_zero(randn(r, &[3, 6]), 0.1)], |t, v| t.point_norm(v[0], 2).unwrap()),
    ];
    let bn_eval = stats.clone();
    out.push(case(
        "batch_norm_train",
        vec![randn(r, &[3, 2, 5]), randn(r, &[2]), randn(r, &[2])],
        move |t, v| {
            let mut st = stats.clone();
            t.batch_norm(v[0], v[1], v[2], &mut st, true).unwrap()
        },
    ));
    out.push(case(
        "batch_norm_eval",
        vec![randn(r, &[3, 2, 5]), randn(r, &[2]), randn(r, &[2])],
        move |t, v| {
            let mut st = bn_eval.clone();
            t.batch_norm(v[0], v[1], v[2], &mut st, false).unwrap()
        },
    ));
    out
}

/// Attention block and Wing loss as the model composes them.
pub fn composite_cases(seed: u64) -> Vec<Case> {
    let r = &mut rng(seed);
    let wing = WingParams::default();
    let mut leaves = vec![randn(r, &[6, 8])];
    for _ in 0..4 {
        leaves.push(randn(r, &[8, 8]).map(|v| v * 0.3));
        leaves.push(randn(r, &[8]));
    }
    let mha = case("multi_head_attention", leaves, |t, v| {
        let w = AttentionWeights {
            wq: v[1],
            bq: v[2],
            wk: v[3],
            bk: v[4],
            wv: v[5],
            bv: v[6],
            wo: v[7],
            bo: v[8],
        };
        multi_head_attention(t, v[0], &w, 2, 2).unwrap().0
    });
    // per-landmark error vectors whose lengths straddle the threshold
    let target = randn(r, &[2, 102]);
    let dists = wing_arguments(r, wing.w, 2 * 51);
    let pred = Tensor::from_fn(&[2, 102], |i| {
        let (k, axis) = (i / 2, i % 2);
        let angle = k as f64 * 0.7;
        let d = dists.data()[k].abs();
        target.data()[i] + d * if axis == 0 { angle.cos() } else { angle.sin() }
    });
    let wl = case("wing_loss", vec![pred, target], move |t, v| wing_loss(t, v[0], v[1], &wing).unwrap());
    vec![mha, wl]
}

/// A network small enough to difference every parameter.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_dim: 216,
        seq_len: 10,
        cnn_channels: vec![3, 4, 4, 6],
        d_model: 6,
        n_head: 2,
        d_ff: 8,
        encoder_layers: 2,
        ..ModelConfig::default()
    }
}

/// Gradient checks of Wing loss over a training-mode forward pass (batch
/// statistics, fixed dropout masks), one per parameter tensor. With
/// `per_tensor` set only that many coordinates of each tensor are checked.
pub fn network_check(config: &ModelConfig, seed: u64, batch: usize, per_tensor: Option<usize>) -> Vec<(String, GradCheck)> {
    let net = Network::<f64>::init(config, seed).unwrap();
    let r = &mut rng(seed ^ 0xa11);
    let input = randn(r, &[batch, config.seq_len, config.input_dim]);
    let target = randn(r, &[batch, config.output_dim()]).map(|v| v * 0.1);
    let coords: Option<Vec<Vec<usize>>> = per_tensor.map(|k| {
        net.params()
            .iter()
            .map(|p| (0..k.min(p.len())).map(|_| r.gen_range(0..p.len())).collect())
            .collect()
    });
    let dropout_seed = seed ^ 0xd0;
    let model = net.clone();
    let build = move |t: &mut Tape<f64>, v: &[Var]| {
        let x = t.constant(input.clone());
        let mut drop_rng = rng(dropout_seed);
        let out = model
            .forward(
                t,
                v,
                x,
                ForwardOptions {
                    bn: BnMode::Batch,
                    dropout: Some(&mut drop_rng),
                },
            )
            .unwrap();
        let y = t.constant(target.clone());
        wing_loss(t, out.pred, y, &WingParams::default()).unwrap()
    };
    let errs = gradient_check(net.params(), coords.as_deref(), seed, &build);
    net.names().iter().cloned().zip(errs).collect()
}
