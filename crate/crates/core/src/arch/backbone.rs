use super::Model;
use crate::error::{Error, Result};
use crate::kernels::{activate, Activation};
use crate::tensor::Tensor;

/// Output channels of the five stride-2 depthwise-separable stages.
pub const BACKBONE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];
/// 1-based stages whose outputs feed the neck (strides 8, 16, 32).
pub const TAP_STAGES: [usize; 3] = [3, 4, 5];

/// Runs the backbone, returning the stride 8/16/32 feature maps.
///
/// Each stage is a 3x3 depthwise convolution (stride 2, pad 1) then a 1x1
/// pointwise convolution, both followed by ReLU, so every stage maps an
/// extent `e` to `ceil(e / 2)`.
pub fn backbone_forward(model: &Model, image: &Tensor) -> Result<[Tensor; 3]> {
    let s = model.config().input_size;
    let expected = [1, 3, s, s];
    if image.shape() != expected {
        let [n, c, h, w] = image.shape();
        let (dim, exp, found) = if n != 1 {
            ("batch", 1, n)
        } else if c != 3 {
            ("image channels", 3, c)
        } else if h != s {
            ("input height", s, h)
        } else {
            ("input width", s, w)
        };
        return Err(Error::ShapeMismatch {
            dim,
            expected: exp,
            found,
        });
    }

    let mut x = image.clone();
    let mut taps = Vec::with_capacity(3);
    for stage in 1..=BACKBONE_WIDTHS.len() {
        let c = x.channels();
        x = activate(
            &model.apply_conv(&format!("backbone.stage{stage}.dw"), &x, 2, 1, c)?,
            Activation::Relu,
        );
        x = activate(
            &model.apply_conv(&format!("backbone.stage{stage}.pw"), &x, 1, 0, 1)?,
            Activation::Relu,
        );
        if TAP_STAGES.contains(&stage) {
            taps.push(x.clone());
        }
    }
    Ok(taps.try_into().expect("three taps"))
}
