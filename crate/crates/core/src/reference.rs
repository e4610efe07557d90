//! Naive reference implementations used as oracles by the test suites and
//! the `selftest` subcommand. Nothing here shares code with the optimized
//! paths it checks.

use crate::anchors::iou;
use crate::postproc::{Detection, TieBreak};
use crate::tensor::Tensor;

/// Quadruple-loop cross-correlation with explicit bounds checks, accumulated in `f64`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
) -> Tensor {
    let [n, in_c, h, w] = input.shape();
    let [out_c, group_in, kh, kw] = weight.shape();
    assert_eq!(group_in * groups, in_c);
    let oh = (h + 2 * padding.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * padding.1 - kw) / stride.1 + 1;
    let group_out = out_c / groups;
    Tensor::from_fn([n, out_c, oh, ow], |[b, oc, oy, ox]| {
        let g = oc / group_out;
        let mut acc = bias.map_or(0.0, |bs| f64::from(bs[oc]));
        for icg in 0..group_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride.0 + ky) as i64 - padding.0 as i64;
                    let ix = (ox * stride.1 + kx) as i64 - padding.1 as i64;
                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                        continue;
                    }
                    let v = input.get([b, g * group_in + icg, iy as usize, ix as usize]);
                    acc += f64::from(v) * f64::from(weight.get([oc, icg, ky, kx]));
                }
            }
        }
        acc as f32
    })
}

pub fn max_pool(input: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Tensor {
    let [n, c, h, w] = input.shape();
    let oh = (h - window.0) / stride.0 + 1;
    let ow = (w - window.1) / stride.1 + 1;
    Tensor::from_fn([n, c, oh, ow], |[b, ch, oy, ox]| {
        let mut best = f32::NEG_INFINITY;
        for dy in 0..window.0 {
            for dx in 0..window.1 {
                let v = input.get([b, ch, oy * stride.0 + dy, ox * stride.1 + dx]);
                if v > best {
                    best = v;
                }
            }
        }
        best
    })
}

pub fn avg_pool(input: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Tensor {
    let [n, c, h, w] = input.shape();
    let oh = (h - window.0) / stride.0 + 1;
    let ow = (w - window.1) / stride.1 + 1;
    Tensor::from_fn([n, c, oh, ow], |[b, ch, oy, ox]| {
        let mut sum = 0.0f64;
        for dy in 0..window.0 {
            for dx in 0..window.1 {
                sum += f64::from(input.get([b, ch, oy * stride.0 + dy, ox * stride.1 + dx]));
            }
        }
        (sum / (window.0 * window.1) as f64) as f32
    })
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Tensor {
    let [n, c, h, w] = input.shape();
    Tensor::from_fn([n, c, h * factor, w * factor], |[b, ch, y, x]| {
        input.get([b, ch, y / factor, x / factor])
    })
}

/// Brute-force NMS: repeatedly take the highest-confidence survivor
/// (lowest index on ties) and drop everything overlapping it.
pub fn nms(cands: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut alive: Vec<usize> = (0..cands.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for pos in 1..alive.len() {
            if cands[alive[pos]].confidence > cands[alive[best]].confidence {
                best = pos;
            }
        }
        let top = alive.remove(best);
        kept.push(cands[top]);
        alive.retain(|&j| iou(&cands[top].bbox, &cands[j].bbox) <= iou_thresh);
    }
    kept
}

/// Cross-class removal written as repeated sweeps over every live pair,
/// stopping once a sweep removes nothing.
pub fn orcc_fixed_point(
    faces: &[Detection],
    masks: &[Detection],
    thresh: f64,
    tie: TieBreak,
) -> (Vec<Detection>, Vec<Detection>) {
    let mut face_removed = vec![false; faces.len()];
    let mut mask_removed = vec![false; masks.len()];
    loop {
        let mut changed = false;
        for f in 0..faces.len() {
            for m in 0..masks.len() {
                if face_removed[f] || mask_removed[m] {
                    continue;
                }
                if iou(&faces[f].bbox, &masks[m].bbox) > thresh {
                    let (fc, mc) = (faces[f].confidence, masks[m].confidence);
                    if mc > fc || (mc == fc && tie == TieBreak::RemoveFace) {
                        face_removed[f] = true;
                    } else {
                        mask_removed[m] = true;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let survivors = |items: &[Detection], removed: &[bool]| {
        (0..items.len())
            .filter(|&i| !removed[i])
            .map(|i| items[i])
            .collect()
    };
    (
        survivors(faces, &face_removed),
        survivors(masks, &mask_removed),
    )
}
