//! Context module (three stacked-3x3 branches) followed by channel and
//! spatial attention.

use super::Model;
use crate::error::{Error, Result};
use crate::kernels::{
    activate, concat_channels, conv2d, global_pool, linear, sigmoid, Activation, ConvParams,
    PoolMode,
};
use crate::tensor::Tensor;

/// Largest `f32` below 1. Gates are kept inside the open unit interval even
/// where `f32` rounding of the sigmoid would reach an endpoint.
const GATE_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

fn gate(x: f32) -> f32 {
    sigmoid(x).clamp(f32::MIN_POSITIVE, GATE_MAX)
}

/// Context branches: one, two and three 3x3 convolutions producing C/2, C/4
/// and C/4 channels, concatenated in that order and rectified.
pub fn context_module(model: &Model, feature: &Tensor, level: usize) -> Result<Tensor> {
    let f = model.config().fpn_channels;
    if feature.channels() != f {
        return Err(Error::ShapeMismatch {
            dim: "head input channels",
            expected: f,
            found: feature.channels(),
        });
    }
    let prefix = format!("head{level}.ctx");
    let branch = |name: &str, depth: usize| -> Result<Tensor> {
        let mut x = model.apply_conv(&format!("{prefix}.{name}.conv0"), feature, 1, 1, 1)?;
        for i in 1..depth {
            x = activate(&x, Activation::Relu);
            x = model.apply_conv(&format!("{prefix}.{name}.conv{i}"), &x, 1, 1, 1)?;
        }
        Ok(x)
    };
    let b1 = branch("b1", 1)?;
    let b2 = branch("b2", 2)?;
    let b3 = branch("b3", 3)?;
    Ok(activate(
        &concat_channels(&[&b1, &b2, &b3])?,
        Activation::Relu,
    ))
}

/// Shared two-layer perceptron of the channel gate, `C -> C/r -> C`.
#[derive(Debug, Clone, Copy)]
pub struct ChannelMlp<'a> {
    pub fc1_weight: &'a Tensor,
    pub fc1_bias: &'a [f32],
    pub fc2_weight: &'a Tensor,
    pub fc2_bias: &'a [f32],
}

impl ChannelMlp<'_> {
    fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        let hidden: Vec<f32> = linear(x, self.fc1_weight, self.fc1_bias)?
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        linear(&hidden, self.fc2_weight, self.fc2_bias)
    }
}

/// Per-(batch, channel) gate `sigmoid(mlp(avg) + mlp(max))`, laid out `(n, c, 1, 1)`.
pub fn channel_gate(feature: &Tensor, mlp: &ChannelMlp<'_>) -> Result<Tensor> {
    let [n, c, _, _] = feature.shape();
    let avg = global_pool(feature, PoolMode::Avg)?;
    let max = global_pool(feature, PoolMode::Max)?;
    let mut gates = Vec::with_capacity(n * c);
    for b in 0..n {
        let a = mlp.forward(&avg.data()[b * c..(b + 1) * c])?;
        let m = mlp.forward(&max.data()[b * c..(b + 1) * c])?;
        gates.extend(a.iter().zip(&m).map(|(x, y)| gate(x + y)));
    }
    Tensor::new([n, c, 1, 1], gates)
}

pub fn apply_channel_gate(feature: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = feature.shape();
    if gate.shape() != [n, c, 1, 1] {
        return Err(Error::ShapeMismatch {
            dim: "channel gate",
            expected: n * c,
            found: gate.len(),
        });
    }
    let hw = h * w;
    let data = feature
        .data()
        .chunks(hw.max(1))
        .zip(gate.data())
        .flat_map(|(plane, &g)| plane.iter().map(move |v| v * g))
        .collect();
    Tensor::new(feature.shape(), data)
}

pub fn channel_attention(feature: &Tensor, mlp: &ChannelMlp<'_>) -> Result<Tensor> {
    apply_channel_gate(feature, &channel_gate(feature, mlp)?)
}

/// Per-position gate from a 7x7 convolution over the `[max, mean]` channel summary.
pub fn spatial_gate(feature: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let [n, c, h, w] = feature.shape();
    let hw = h * w;
    let mut summary = Tensor::zeros([n, 2, h, w]);
    for b in 0..n {
        for p in 0..hw {
            let mut max = f32::NEG_INFINITY;
            let mut sum = 0.0f64;
            for ch in 0..c {
                let v = feature.plane(b, ch)[p];
                max = max.max(v);
                sum += f64::from(v);
            }
            let out = summary.data_mut();
            out[(b * 2) * hw + p] = max;
            out[(b * 2 + 1) * hw + p] = (sum / c as f64) as f32;
        }
    }
    let logits = conv2d(&summary, &ConvParams::new(weight).bias(bias).padding(3))?;
    Ok(logits.map(gate))
}

pub fn apply_spatial_gate(feature: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = feature.shape();
    if gate.shape() != [n, 1, h, w] {
        return Err(Error::ShapeMismatch {
            dim: "spatial gate",
            expected: n * h * w,
            found: gate.len(),
        });
    }
    let hw = h * w;
    let data = (0..n * c)
        .flat_map(|plane| {
            let b = plane / c;
            let g = &gate.data()[b * hw..(b + 1) * hw];
            let src = &feature.data()[plane * hw..(plane + 1) * hw];
            src.iter().zip(g).map(|(v, g)| v * g)
        })
        .collect();
    Tensor::new(feature.shape(), data)
}

pub fn spatial_attention(feature: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    apply_spatial_gate(feature, &spatial_gate(feature, weight, bias)?)
}

pub(crate) fn level_mlp<'a>(model: &'a Model, level: usize) -> ChannelMlp<'a> {
    let p = format!("head{level}.cbam");
    ChannelMlp {
        fc1_weight: model.tensor(&format!("{p}.fc1.weight")),
        fc1_bias: model.tensor(&format!("{p}.fc1.bias")).data(),
        fc2_weight: model.tensor(&format!("{p}.fc2.weight")),
        fc2_bias: model.tensor(&format!("{p}.fc2.bias")).data(),
    }
}

/// Context module, then channel attention, then spatial attention.
pub fn context_attention_forward(model: &Model, feature: &Tensor, level: usize) -> Result<Tensor> {
    let ctx = context_module(model, feature, level)?;
    let ctx = channel_attention(&ctx, &level_mlp(model, level))?;
    let (w, b) = model.conv(&format!("head{level}.cbam.spatial"));
    spatial_attention(&ctx, w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, init_weights};
    use crate::config::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model {
        let cfg = ModelConfig {
            input_size: 32,
            fpn_channels: 16,
            ..Default::default()
        };
        build_model(cfg.clone(), init_weights(&cfg, seed).unwrap()).unwrap()
    }

    fn random_feature(seed: u64, shape: [usize; 4]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-2.0f32..2.0))
    }

    #[test]
    fn shape_is_preserved() {
        let m = model(1);
        let x = random_feature(2, [1, 16, 4, 4]);
        for level in 0..3 {
            assert_eq!(
                context_attention_forward(&m, &x, level).unwrap().shape(),
                x.shape()
            );
        }
    }

    #[test]
    fn unit_gates_leave_context_output() {
        let m = model(3);
        let x = random_feature(4, [1, 16, 5, 5]);
        let ctx = context_module(&m, &x, 1).unwrap();
        let ones_c = Tensor::full([1, 16, 1, 1], 1.0);
        let ones_s = Tensor::full([1, 1, 5, 5], 1.0);
        let bypassed =
            apply_spatial_gate(&apply_channel_gate(&ctx, &ones_c).unwrap(), &ones_s).unwrap();
        assert_eq!(bypassed, ctx);
    }

    #[test]
    fn zeroed_branch_zeroes_its_slice() {
        let cfg = ModelConfig {
            input_size: 32,
            fpn_channels: 16,
            ..Default::default()
        };
        for (branch, depth, range) in [("b1", 1, 0..8), ("b2", 2, 8..12), ("b3", 3, 12..16)] {
            let mut store = init_weights(&cfg, 7).unwrap();
            let last = format!("head0.ctx.{branch}.conv{}", depth - 1);
            for suffix in ["weight", "bias"] {
                let name = format!("{last}.{suffix}");
                let shape = store.get(&name).unwrap().shape();
                store.replace(&name, Tensor::zeros(shape)).unwrap();
            }
            let m = build_model(cfg.clone(), store).unwrap();
            let x = random_feature(8, [1, 16, 4, 4]);
            let ctx = context_module(&m, &x, 0).unwrap();
            for c in 0..16 {
                let all_zero = ctx.plane(0, c).iter().all(|&v| v == 0.0);
                if range.contains(&c) {
                    assert!(all_zero, "{branch}: channel {c} should be zero");
                }
            }
            let others_nonzero = (0..16)
                .filter(|c| !range.contains(c))
                .any(|c| ctx.plane(0, c).iter().any(|&v| v != 0.0));
            assert!(others_nonzero, "{branch}");
        }
    }

    #[test]
    fn zero_mlp_gives_half() {
        let x = random_feature(5, [1, 8, 3, 3]);
        let fc1 = Tensor::zeros([1, 1, 8, 2]);
        let fc2 = Tensor::zeros([1, 1, 2, 8]);
        let mlp = ChannelMlp {
            fc1_weight: &fc1,
            fc1_bias: &[0.0; 2],
            fc2_weight: &fc2,
            fc2_bias: &[0.0; 8],
        };
        let out = channel_attention(&x, &mlp).unwrap();
        assert_eq!(out, x.map(|v| 0.5 * v));
    }

    #[test]
    fn single_channel_hand_mlp() {
        // Channel [1, 2, 3, 6]: avg 3, max 6. fc1 = 0.5 (bias 0), fc2 = 2 (bias -1).
        // mlp(3) = 2 * relu(1.5) - 1 = 2; mlp(6) = 2 * 3 - 1 = 5; gate = sigmoid(7).
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let fc1 = Tensor::full([1, 1, 1, 1], 0.5);
        let fc2 = Tensor::full([1, 1, 1, 1], 2.0);
        let mlp = ChannelMlp {
            fc1_weight: &fc1,
            fc1_bias: &[0.0],
            fc2_weight: &fc2,
            fc2_bias: &[-1.0],
        };
        let g = channel_gate(&x, &mlp).unwrap();
        let expected = 1.0 / (1.0 + (-7.0f64).exp());
        assert!((f64::from(g.data()[0]) - expected).abs() < 1e-6);
    }

    #[test]
    fn zero_spatial_conv_gives_half_and_constant_feature_gives_constant_gate() {
        let x = random_feature(6, [1, 4, 5, 5]);
        let w = Tensor::zeros([1, 2, 7, 7]);
        assert_eq!(
            spatial_attention(&x, &w, &[0.0]).unwrap(),
            x.map(|v| 0.5 * v)
        );

        let constant = Tensor::full([1, 4, 9, 9], 1.5);
        let w = Tensor::full([1, 2, 7, 7], 0.01);
        let g = spatial_gate(&constant, &w, &[0.0]).unwrap();
        // Interior positions see the full kernel; all interior gates agree.
        let centre = g.get([0, 0, 4, 4]);
        assert!((centre - sigmoid(0.01 * 49.0 * 3.0)).abs() < 1e-6);
        for y in 3..6 {
            for x in 3..6 {
                assert_eq!(g.get([0, 0, y, x]), centre);
            }
        }
    }

    #[test]
    fn hand_spatial_gate_on_three_by_three() {
        // Two channels; summary max/mean computed by hand, kernel picks the
        // centre tap of max with weight 1 and the right neighbour of mean with weight 2.
        let x = Tensor::new(
            [1, 2, 3, 3],
            vec![
                1.0, -2.0, 0.5, 4.0, 0.0, 1.0, -1.0, 2.0, 3.0, 3.0, 2.0, -0.5, 0.0, 2.0, 5.0, 1.0,
                0.0, -3.0,
            ],
        )
        .unwrap();
        let mut w = Tensor::zeros([1, 2, 7, 7]);
        w.set([0, 0, 3, 3], 1.0);
        w.set([0, 1, 3, 4], 2.0);
        let g = spatial_gate(&x, &w, &[0.1]).unwrap();
        let max = |p: usize| x.data()[p].max(x.data()[9 + p]);
        let mean = |p: usize| (x.data()[p] + x.data()[9 + p]) / 2.0;
        for y in 0..3 {
            for xx in 0..3 {
                let p = y * 3 + xx;
                let right = if xx + 1 < 3 { mean(p + 1) } else { 0.0 };
                let logit = max(p) + 2.0 * right + 0.1;
                assert!(
                    (g.get([0, 0, y, xx]) - sigmoid(logit)).abs() < 1e-5,
                    "({y},{xx})"
                );
            }
        }
    }

    #[test]
    fn gates_stay_inside_open_interval() {
        let x = random_feature(9, [1, 4, 3, 3]).map(|v| v * 1e4);
        let w = Tensor::full([1, 2, 7, 7], 1.0);
        let g = spatial_gate(&x, &w, &[0.0]).unwrap();
        assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let fc1 = Tensor::full([1, 1, 4, 1], 1.0);
        let fc2 = Tensor::full([1, 1, 1, 4], 1.0);
        let mlp = ChannelMlp {
            fc1_weight: &fc1,
            fc1_bias: &[0.0],
            fc2_weight: &fc2,
            fc2_bias: &[0.0; 4],
        };
        let cg = channel_gate(&x, &mlp).unwrap();
        assert!(cg.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
