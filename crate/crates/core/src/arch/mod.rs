//! The detector network: depthwise-separable backbone, FPN neck, and
//! context-attention heads predicting per-anchor offsets and class logits.
//!
//! # Weight manifest
//!
//! Every tensor is 4-D. Biases are `(1, len, 1, 1)`; MLP matrices are
//! `(1, 1, in, out)`. `F` is `fpn_channels`, `A` is `anchors_per_cell`,
//! `r` is `cbam_reduction`, `l` is the level (0 shallow .. 2 deep).
//!
//! | name | shape |
//! |------|-------|
//! | `backbone.stage{1..5}.dw.weight` | `(c_in, 1, 3, 3)` |
//! | `backbone.stage{1..5}.pw.weight` | `(c_out, c_in, 1, 1)` |
//! | `fpn.lateral{l}.weight` | `(F, c_tap, 1, 1)` |
//! | `fpn.smooth{0,1}.weight` | `(F, F, 3, 3)` |
//! | `head{l}.ctx.b1.conv0.weight` | `(F/2, F, 3, 3)` |
//! | `head{l}.ctx.b2.conv{0,1}.weight` | `(F/4, F or F/4, 3, 3)` |
//! | `head{l}.ctx.b3.conv{0,1,2}.weight` | `(F/4, F or F/4, 3, 3)` |
//! | `head{l}.cbam.fc1.weight` / `fc2.weight` | `(1, 1, F, F/r)` / `(1, 1, F/r, F)` |
//! | `head{l}.cbam.spatial.weight` | `(1, 2, 7, 7)` |
//! | `head{l}.loc.weight` / `head{l}.cls.weight` | `(A*4, F, 1, 1)` / `(A*3, F, 1, 1)` |
//!
//! Each `.weight` has a matching `.bias`. Backbone channel widths are
//! `3 -> 16 -> 32 -> 64 -> 128 -> 256`; stages 3, 4 and 5 are the stride
//! 8, 16 and 32 taps.

mod backbone;
mod fpn;
mod head;
mod init;

use crate::anchors::LevelLayout;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io::WeightStore;
use crate::kernels::{conv2d, ConvParams};
use crate::tensor::Tensor;

pub use backbone::{backbone_forward, BACKBONE_WIDTHS, TAP_STAGES};
pub use fpn::fpn_forward;
pub use head::{
    apply_channel_gate, apply_spatial_gate, channel_attention, channel_gate,
    context_attention_forward, context_module, spatial_attention, spatial_gate, ChannelMlp,
};
pub use init::{init_weights, kaiming_init, FanMode};

/// Raw network outputs, one row per anchor in canonical anchor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Encoded box offsets.
    pub loc: Vec<[f32; 4]>,
    /// Unnormalized background/face/mask scores.
    pub cls: Vec<[f32; 3]>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }
}

/// Names and shapes of every tensor the network reads, in canonical order.
pub fn weight_manifest(config: &ModelConfig) -> Vec<(String, [usize; 4])> {
    let f = config.fpn_channels;
    let mut m = Vec::new();
    let conv = |m: &mut Vec<(String, [usize; 4])>, prefix: String, shape: [usize; 4]| {
        m.push((format!("{prefix}.weight"), shape));
        m.push((format!("{prefix}.bias"), [1, shape[0], 1, 1]));
    };

    let mut c_in = 3;
    for (i, &c_out) in BACKBONE_WIDTHS.iter().enumerate() {
        conv(
            &mut m,
            format!("backbone.stage{}.dw", i + 1),
            [c_in, 1, 3, 3],
        );
        conv(
            &mut m,
            format!("backbone.stage{}.pw", i + 1),
            [c_out, c_in, 1, 1],
        );
        c_in = c_out;
    }
    for (l, &stage) in TAP_STAGES.iter().enumerate() {
        conv(
            &mut m,
            format!("fpn.lateral{l}"),
            [f, BACKBONE_WIDTHS[stage - 1], 1, 1],
        );
    }
    for l in 0..2 {
        conv(&mut m, format!("fpn.smooth{l}"), [f, f, 3, 3]);
    }
    let hidden = f / config.cbam_reduction;
    let a = config.anchors_per_cell;
    for l in 0..3 {
        let p = format!("head{l}");
        conv(&mut m, format!("{p}.ctx.b1.conv0"), [f / 2, f, 3, 3]);
        conv(&mut m, format!("{p}.ctx.b2.conv0"), [f / 4, f, 3, 3]);
        conv(&mut m, format!("{p}.ctx.b2.conv1"), [f / 4, f / 4, 3, 3]);
        conv(&mut m, format!("{p}.ctx.b3.conv0"), [f / 4, f, 3, 3]);
        conv(&mut m, format!("{p}.ctx.b3.conv1"), [f / 4, f / 4, 3, 3]);
        conv(&mut m, format!("{p}.ctx.b3.conv2"), [f / 4, f / 4, 3, 3]);
        m.push((format!("{p}.cbam.fc1.weight"), [1, 1, f, hidden]));
        m.push((format!("{p}.cbam.fc1.bias"), [1, hidden, 1, 1]));
        m.push((format!("{p}.cbam.fc2.weight"), [1, 1, hidden, f]));
        m.push((format!("{p}.cbam.fc2.bias"), [1, f, 1, 1]));
        conv(&mut m, format!("{p}.cbam.spatial"), [1, 2, 7, 7]);
        conv(&mut m, format!("{p}.loc"), [a * 4, f, 1, 1]);
        conv(
            &mut m,
            format!("{p}.cls"),
            [a * config.num_classes, f, 1, 1],
        );
    }
    m
}

/// A validated network: every manifest tensor is present with its exact shape.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: WeightStore,
    layout: Vec<LevelLayout>,
}

pub fn build_model(config: ModelConfig, weights: WeightStore) -> Result<Model> {
    config.validate()?;
    if config.strides != [8, 16, 32] {
        return Err(Error::Config(format!(
            "the reference backbone taps strides [8, 16, 32], config asks for {:?}",
            config.strides
        )));
    }
    for (name, expected) in weight_manifest(&config) {
        let t = weights
            .get(&name)
            .ok_or_else(|| Error::MissingWeight(name.clone()))?;
        if t.shape() != expected {
            return Err(Error::WeightShape {
                name,
                expected,
                found: t.shape(),
            });
        }
    }
    let layout = config
        .strides
        .iter()
        .map(|&stride| LevelLayout {
            stride,
            grid_h: config.grid(stride),
            grid_w: config.grid(stride),
            anchors_per_cell: config.anchors_per_cell,
        })
        .collect();
    Ok(Model {
        config,
        weights,
        layout,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn layout(&self) -> &[LevelLayout] {
        &self.layout
    }

    pub fn num_anchors(&self) -> usize {
        self.layout.iter().map(LevelLayout::count).sum()
    }

    pub(crate) fn tensor(&self, name: &str) -> &Tensor {
        self.weights
            .get(name)
            .unwrap_or_else(|| panic!("validated model lacks `{name}`"))
    }

    /// Weight and bias for the convolution stored under `prefix`.
    pub(crate) fn conv(&self, prefix: &str) -> (&Tensor, &[f32]) {
        (
            self.tensor(&format!("{prefix}.weight")),
            self.tensor(&format!("{prefix}.bias")).data(),
        )
    }

    pub(crate) fn apply_conv(
        &self,
        prefix: &str,
        input: &Tensor,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor> {
        let (w, b) = self.conv(prefix);
        conv2d(
            input,
            &ConvParams::new(w)
                .bias(b)
                .stride(stride)
                .padding(padding)
                .groups(groups),
        )
    }
}

/// Flattens a `(1, A*k, H, W)` head output into `H*W*A` rows of `k` values,
/// cells row-major then anchor index.
fn flatten_head<const K: usize>(out: &Tensor, anchors_per_cell: usize, rows: &mut Vec<[f32; K]>) {
    let [_, c, h, w] = out.shape();
    debug_assert_eq!(c, anchors_per_cell * K);
    for i in 0..h {
        for j in 0..w {
            for a in 0..anchors_per_cell {
                rows.push(std::array::from_fn(|k| out.get([0, a * K + k, i, j])));
            }
        }
    }
}

pub fn model_forward(model: &Model, image: &Tensor) -> Result<Predictions> {
    let taps = backbone_forward(model, image)?;
    let pyramid = fpn_forward(model, &taps)?;
    let a = model.config.anchors_per_cell;
    let mut loc = Vec::with_capacity(model.num_anchors());
    let mut cls = Vec::with_capacity(model.num_anchors());
    for (l, feature) in pyramid.iter().enumerate() {
        let attended = context_attention_forward(model, feature, l)?;
        let loc_map = model.apply_conv(&format!("head{l}.loc"), &attended, 1, 0, 1)?;
        let cls_map = model.apply_conv(&format!("head{l}.cls"), &attended, 1, 0, 1)?;
        flatten_head(&loc_map, a, &mut loc);
        flatten_head(&cls_map, a, &mut cls);
    }
    Ok(Predictions { loc, cls })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            input_size: 64,
            fpn_channels: 16,
            ..Default::default()
        }
    }

    #[test]
    fn builds_from_complete_store() {
        let cfg = small_config();
        let store = init_weights(&cfg, 1).unwrap();
        let model = build_model(cfg, store).unwrap();
        assert_eq!(model.num_anchors(), (64 + 16 + 4) * 2);
    }

    #[test]
    fn missing_head_kernel_is_named() {
        let cfg = small_config();
        let mut store = init_weights(&cfg, 1).unwrap();
        store.remove("head1.cls.weight");
        match build_model(cfg, store) {
            Err(Error::MissingWeight(name)) => assert_eq!(name, "head1.cls.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transposed_kernel_is_a_shape_error() {
        let cfg = small_config();
        let mut store = init_weights(&cfg, 1).unwrap();
        let t = store.get("fpn.lateral0.weight").unwrap().clone();
        let [o, i, h, w] = t.shape();
        store
            .replace("fpn.lateral0.weight", t.reshape([i, o, h, w]).unwrap())
            .unwrap();
        match build_model(cfg, store) {
            Err(Error::WeightShape {
                name,
                expected,
                found,
            }) => {
                assert_eq!(name, "fpn.lateral0.weight");
                assert_eq!(expected, [16, 64, 1, 1]);
                assert_eq!(found, [64, 16, 1, 1]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_foreign_strides() {
        let cfg = ModelConfig {
            strides: [4, 8, 16],
            ..small_config()
        };
        let store = init_weights(&small_config(), 1).unwrap();
        assert!(matches!(build_model(cfg, store), Err(Error::Config(_))));
    }

    #[test]
    fn flatten_order_is_cell_major_then_anchor() {
        // Value encodes (channel, row, col).
        let out = Tensor::from_fn([1, 8, 2, 3], |[_, c, y, x]| (c * 100 + y * 10 + x) as f32);
        let mut rows: Vec<[f32; 4]> = Vec::new();
        flatten_head(&out, 2, &mut rows);
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0], [0.0, 100.0, 200.0, 300.0]);
        assert_eq!(rows[1], [400.0, 500.0, 600.0, 700.0]);
        // cell (0, 1), anchor 1
        assert_eq!(rows[3], [401.0, 501.0, 601.0, 701.0]);
        // cell (1, 0), anchor 0
        assert_eq!(rows[6], [10.0, 110.0, 210.0, 310.0]);
    }
}
