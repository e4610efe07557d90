//! Forward-only numeric kernels over [`Tensor`].
//!
//! Convolution is cross-correlation with zero padding. Every kernel is a pure
//! function of its inputs.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Convolution weights and geometry. `weight` has shape
/// `(out_c, in_c / groups, kh, kw)`.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    pub weight: &'a Tensor,
    pub bias: Option<&'a [f32]>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl<'a> ConvParams<'a> {
    pub fn new(weight: &'a Tensor) -> Self {
        ConvParams {
            weight,
            bias: None,
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }

    pub fn bias(mut self, bias: &'a [f32]) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = (stride, stride);
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = (padding, padding);
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

/// `floor((extent + 2 * pad - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit even once.
pub fn output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range of output columns whose input column `ox * stride + k - pad` lands in `0..extent`.
fn valid_outputs(
    out_extent: usize,
    extent: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Range<usize> {
    let start = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    if extent + pad <= k {
        return 0..0;
    }
    let end = ((extent - 1 + pad - k) / stride + 1).min(out_extent);
    start.min(end)..end
}

pub fn conv2d(input: &Tensor, params: &ConvParams<'_>) -> Result<Tensor> {
    let [n, in_c, h, w] = input.shape();
    let [out_c, group_in, kh, kw] = params.weight.shape();
    let groups = params.groups;
    if groups == 0 || in_c % groups != 0 || out_c % groups != 0 {
        return Err(Error::Groups {
            groups,
            in_c,
            out_c,
        });
    }
    if group_in * groups != in_c {
        return Err(Error::ShapeMismatch {
            dim: "input channels",
            expected: group_in * groups,
            found: in_c,
        });
    }
    if let Some(bias) = params.bias {
        if bias.len() != out_c {
            return Err(Error::ShapeMismatch {
                dim: "bias length",
                expected: out_c,
                found: bias.len(),
            });
        }
    }
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let oh = output_extent(h, kh, sh, ph).ok_or(Error::ShapeMismatch {
        dim: "height",
        expected: kh,
        found: h + 2 * ph,
    })?;
    let ow = output_extent(w, kw, sw, pw).ok_or(Error::ShapeMismatch {
        dim: "width",
        expected: kw,
        found: w + 2 * pw,
    })?;

    let group_out = out_c / groups;
    let weights = params.weight.data();
    let col_ranges: Vec<Range<usize>> =
        (0..kw).map(|kx| valid_outputs(ow, w, kx, sw, pw)).collect();
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    let out_data = out.data_mut();

    for b in 0..n {
        for oc in 0..out_c {
            let plane_start = (b * out_c + oc) * oh * ow;
            let out_plane = &mut out_data[plane_start..plane_start + oh * ow];
            if let Some(bias) = params.bias {
                out_plane.fill(bias[oc]);
            }
            let g = oc / group_out;
            for icg in 0..group_in {
                let in_plane = input.plane(b, g * group_in + icg);
                let w_base = (oc * group_in + icg) * kh * kw;
                for ky in 0..kh {
                    for oy in 0..oh {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for (kx, cols) in col_ranges.iter().enumerate() {
                            let wv = weights[w_base + ky * kw + kx];
                            if cols.is_empty() {
                                continue;
                            }
                            if sw == 1 {
                                let ix0 = cols.start + kx - pw;
                                let src = &in_row[ix0..ix0 + cols.len()];
                                for (o, &v) in out_row[cols.clone()].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in cols.clone() {
                                    out_row[ox] += wv * in_row[ox * sw + kx - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Unpadded window pooling.
pub fn pool2d(
    input: &Tensor,
    mode: PoolMode,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    let oh = output_extent(h, window.0, stride.0, 0).ok_or(Error::ShapeMismatch {
        dim: "pool height",
        expected: window.0,
        found: h,
    })?;
    let ow = output_extent(w, window.1, stride.1, 0).ok_or(Error::ShapeMismatch {
        dim: "pool width",
        expected: window.1,
        found: w,
    })?;
    let area = (window.0 * window.1) as f64;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let plane = input.plane(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let rows = oy * stride.0..oy * stride.0 + window.0;
                    let values = rows.flat_map(|y| {
                        let x0 = y * w + ox * stride.1;
                        plane[x0..x0 + window.1].iter().copied()
                    });
                    out.push(match mode {
                        PoolMode::Max => values.fold(f32::NEG_INFINITY, f32::max),
                        PoolMode::Avg => (values.map(f64::from).sum::<f64>() / area) as f32,
                    });
                }
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Per-channel reduction over all spatial positions, giving `(n, c, 1, 1)`.
pub fn global_pool(input: &Tensor, mode: PoolMode) -> Result<Tensor> {
    let [_, _, h, w] = input.shape();
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch {
            dim: "spatial extent",
            expected: 1,
            found: 0,
        });
    }
    pool2d(input, mode, (h, w), (h, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("upsample factor must be positive".into()));
    }
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let plane = input.plane(b, ch);
            for oy in 0..oh {
                let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
                out.extend((0..ow).map(|ox| row[ox / factor]));
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Elementwise `a + coeff * b`.
pub fn add_scaled(a: &Tensor, b: &Tensor, coeff: f32) -> Result<Tensor> {
    check_same_shape(a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x + coeff * y)
        .collect();
    Tensor::new(a.shape(), data)
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
    for (i, dim) in DIMS.into_iter().enumerate() {
        if a.shape()[i] != b.shape()[i] {
            return Err(Error::ShapeMismatch {
                dim,
                expected: a.shape()[i],
                found: b.shape()[i],
            });
        }
    }
    Ok(())
}

/// Stacks tensors along the channel axis in list order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Config("concat_channels needs at least one input".into()))?;
    let [n, _, h, w] = first.shape();
    for t in inputs {
        let [tn, _, th, tw] = t.shape();
        for (dim, expected, found) in [("batch", n, tn), ("height", h, th), ("width", w, tw)] {
            if expected != found {
                return Err(Error::ShapeMismatch {
                    dim,
                    expected,
                    found,
                });
            }
        }
    }
    let total_c: usize = inputs.iter().map(|t| t.channels()).sum();
    let mut out = Vec::with_capacity(n * total_c * h * w);
    for b in 0..n {
        for t in inputs {
            let per_batch = t.channels() * h * w;
            out.extend_from_slice(&t.data()[b * per_batch..(b + 1) * per_batch]);
        }
    }
    Tensor::new([n, total_c, h, w], out)
}

pub fn slice_channels(input: &Tensor, range: Range<usize>) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    if range.start > range.end || range.end > c {
        return Err(Error::ShapeMismatch {
            dim: "channel slice",
            expected: c,
            found: range.end,
        });
    }
    let mut out = Vec::with_capacity(n * range.len() * h * w);
    for b in 0..n {
        for ch in range.clone() {
            out.extend_from_slice(input.plane(b, ch));
        }
    }
    Tensor::new([n, range.len(), h, w], out)
}

/// Keeps the top-left `height x width` window of every plane.
pub fn crop(input: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    if height > h || width > w {
        return Err(Error::ShapeMismatch {
            dim: if height > h {
                "crop height"
            } else {
                "crop width"
            },
            expected: if height > h { h } else { w },
            found: if height > h { height } else { width },
        });
    }
    let mut out = Vec::with_capacity(n * c * height * width);
    for b in 0..n {
        for ch in 0..c {
            let plane = input.plane(b, ch);
            for y in 0..height {
                out.extend_from_slice(&plane[y * w..y * w + width]);
            }
        }
    }
    Tensor::new([n, c, height, width], out)
}

/// Affine map `input · weights + bias` where `weights` is a `(1, 1, k, m)`
/// row-major matrix.
pub fn linear(input: &[f32], weights: &Tensor, bias: &[f32]) -> Result<Vec<f32>> {
    let [_, _, k, m] = weights.shape();
    if input.len() != k {
        return Err(Error::ShapeMismatch {
            dim: "linear input",
            expected: k,
            found: input.len(),
        });
    }
    if bias.len() != m {
        return Err(Error::ShapeMismatch {
            dim: "linear bias",
            expected: m,
            found: bias.len(),
        });
    }
    let w = weights.data();
    Ok((0..m)
        .map(|j| {
            let acc: f64 = input
                .iter()
                .enumerate()
                .map(|(i, &x)| f64::from(x) * f64::from(w[i * m + j]))
                .sum();
            (acc + f64::from(bias[j])) as f32
        })
        .collect())
}
