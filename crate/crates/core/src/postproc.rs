//! From raw predictions to final detections: softmax scoring, confidence
//! filtering, per-class NMS, and cross-class removal of overlapping
//! face/mask pairs.

use crate::anchors::{decode, iou, AnchorSet, BoundingBox, Variances};
use crate::arch::{model_forward, Model, Predictions};
use crate::error::{Error, Result};
use crate::io::{preprocess, RgbImage, DEFAULT_MEANS};
use crate::label::Label;
use crate::loss::softmax;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub label: Label,
    /// Softmax probability of `label`.
    pub confidence: f64,
}

/// Which member of an equal-confidence face/mask pair cross-class removal drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    RemoveMask,
    RemoveFace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Minimum class probability kept.
    pub confidence: f64,
    /// Same-class suppression IoU.
    pub nms_iou: f64,
    /// Cross-class removal IoU.
    pub orcc_iou: f64,
    pub orcc_tie: TieBreak,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            confidence: 0.5,
            nms_iou: 0.4,
            orcc_iou: 0.5,
            orcc_tie: TieBreak::RemoveMask,
        }
    }
}

/// Decodes every row and pairs it with its face and mask probabilities.
/// Returns `[faces, masks]`, each in anchor order.
pub fn score_predictions(
    pred: &Predictions,
    anchors: &AnchorSet,
    image_size: f64,
) -> Result<[Vec<Detection>; 2]> {
    if pred.len() != anchors.len() || pred.cls.len() != pred.loc.len() {
        return Err(Error::ShapeMismatch {
            dim: "prediction rows",
            expected: anchors.len(),
            found: pred.len(),
        });
    }
    let mut faces = Vec::with_capacity(pred.len());
    let mut masks = Vec::with_capacity(pred.len());
    let var = Variances::default();
    for ((loc, cls), anchor) in pred.loc.iter().zip(&pred.cls).zip(anchors.anchors()) {
        let probs = softmax(&cls.map(f64::from));
        let bbox = decode(&loc.map(f64::from), anchor, var, image_size);
        faces.push(Detection {
            bbox,
            label: Label::Face,
            confidence: probs[Label::Face.index()],
        });
        masks.push(Detection {
            bbox,
            label: Label::Mask,
            confidence: probs[Label::Mask.index()],
        });
    }
    Ok([faces, masks])
}

/// Keeps candidates with `confidence >= t_c`, preserving order.
pub fn filter_confidence(cands: Vec<Detection>, t_c: f64) -> Vec<Detection> {
    cands.into_iter().filter(|d| d.confidence >= t_c).collect()
}

/// Greedy single-class NMS. Candidates are visited by descending confidence
/// (ties to the earlier list position); each kept box suppresses every later
/// box with IoU strictly above `iou_thresh`. Output is in kept order.
pub fn nms(cands: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .confidence
            .total_cmp(&cands[a].confidence)
            .then(a.cmp(&b))
    });
    let mut suppressed = vec![false; cands.len()];
    let mut kept = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(cands[i]);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&cands[i].bbox, &cands[j].bbox) > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Cross-class removal. Faces are visited in list order, and for each face
/// the masks in list order, skipping anything already removed. When a pair
/// overlaps by more than `thresh` the lower-confidence member is removed
/// (`tie` decides equal confidences); once the face is removed its inner
/// loop ends. Survivors keep their original order.
pub fn orcc(
    faces: &[Detection],
    masks: &[Detection],
    thresh: f64,
    tie: TieBreak,
) -> (Vec<Detection>, Vec<Detection>) {
    let mut face_alive = vec![true; faces.len()];
    let mut mask_alive = vec![true; masks.len()];
    for (f, face) in faces.iter().enumerate() {
        for (m, mask) in masks.iter().enumerate() {
            if !mask_alive[m] || iou(&face.bbox, &mask.bbox) <= thresh {
                continue;
            }
            let face_loses = match face.confidence.total_cmp(&mask.confidence) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => tie == TieBreak::RemoveFace,
            };
            if face_loses {
                face_alive[f] = false;
                break;
            }
            mask_alive[m] = false;
        }
    }
    let keep = |items: &[Detection], alive: &[bool]| {
        items
            .iter()
            .zip(alive)
            .filter(|(_, &a)| a)
            .map(|(d, _)| *d)
            .collect()
    };
    (keep(faces, &face_alive), keep(masks, &mask_alive))
}

/// Scoring, confidence filter, per-class NMS and cross-class removal on
/// precomputed predictions. Output is sorted by descending confidence, faces
/// before masks on ties.
pub fn postprocess(
    pred: &Predictions,
    anchors: &AnchorSet,
    image_size: f64,
    thresholds: &Thresholds,
) -> Result<Vec<Detection>> {
    let [faces, masks] = score_predictions(pred, anchors, image_size)?;
    let faces = nms(
        &filter_confidence(faces, thresholds.confidence),
        thresholds.nms_iou,
    );
    let masks = nms(
        &filter_confidence(masks, thresholds.confidence),
        thresholds.nms_iou,
    );
    let (faces, masks) = orcc(&faces, &masks, thresholds.orcc_iou, thresholds.orcc_tie);
    let mut all: Vec<Detection> = faces.into_iter().chain(masks).collect();
    all.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(all)
}

/// Full inference on a preprocessed `(1, 3, s, s)` image. Boxes are in
/// input-tensor pixels.
pub fn detect(
    model: &Model,
    anchors: &AnchorSet,
    image: &Tensor,
    thresholds: &Thresholds,
) -> Result<Vec<Detection>> {
    let pred = model_forward(model, image)?;
    postprocess(&pred, anchors, model.config().input_size as f64, thresholds)
}

/// Runs [`detect`] on a decoded image and maps boxes back to its pixel grid.
pub fn detect_image(
    model: &Model,
    anchors: &AnchorSet,
    image: &RgbImage,
    thresholds: &Thresholds,
) -> Result<Vec<Detection>> {
    let size = model.config().input_size;
    let input = preprocess(image, size, DEFAULT_MEANS);
    let (w, h) = (image.width as f64, image.height as f64);
    let mut dets = detect(model, anchors, &input, thresholds)?;
    for d in &mut dets {
        let b = d.bbox.scale(w / size as f64, h / size as f64);
        d.bbox = BoundingBox {
            x_min: b.x_min.clamp(0.0, w),
            y_min: b.y_min.clamp(0.0, h),
            x_max: b.x_max.clamp(0.0, w),
            y_max: b.y_max.clamp(0.0, h),
        };
    }
    Ok(dets)
}
