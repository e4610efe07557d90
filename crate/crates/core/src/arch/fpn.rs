use super::Model;
use crate::error::{Error, Result};
use crate::kernels::{add_scaled, crop, upsample_nearest};
use crate::tensor::Tensor;

/// Top-down feature pyramid.
///
/// Laterals (1x1) bring every tap to `fpn_channels`. Starting from the deepest
/// level, each shallower level adds `fpn_coeff` times the upsampled merged map
/// above it, then applies its 3x3 smoothing convolution. Upsampled maps that
/// overshoot a ceil-division grid are cropped top-left. The deepest level is
/// its lateral alone.
pub fn fpn_forward(model: &Model, features: &[Tensor; 3]) -> Result<[Tensor; 3]> {
    let coeff = model.config().fpn_coeff;
    let strides = model.config().strides;
    let mut laterals = Vec::with_capacity(3);
    for (l, feature) in features.iter().enumerate() {
        let (w, _) = model.conv(&format!("fpn.lateral{l}"));
        if feature.channels() != w.shape()[1] {
            return Err(Error::ShapeMismatch {
                dim: "fpn input channels",
                expected: w.shape()[1],
                found: feature.channels(),
            });
        }
        laterals.push(model.apply_conv(&format!("fpn.lateral{l}"), feature, 1, 0, 1)?);
    }

    let mut merged: [Option<Tensor>; 3] = [None, None, None];
    merged[2] = Some(laterals[2].clone());
    for l in (0..2).rev() {
        let above = merged[l + 1].as_ref().expect("deeper level merged first");
        let factor = strides[l + 1] / strides[l];
        let up = upsample_nearest(above, factor)?;
        let target = &laterals[l];
        let up = crop(&up, target.height(), target.width())?;
        let sum = add_scaled(target, &up, coeff)?;
        merged[l] = Some(model.apply_conv(&format!("fpn.smooth{l}"), &sum, 1, 1, 1)?);
    }
    Ok(merged.map(|m| m.expect("all levels merged")))
}
