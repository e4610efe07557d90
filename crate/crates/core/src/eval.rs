//! Per-class precision and recall with greedy, confidence-ranked matching.

use std::ops::{Add, AddAssign};

use crate::anchors::{iou, BoundingBox};
use crate::io::{AnnotationSet, ImageAnnotations};
use crate::label::Label;
use crate::postproc::Detection;

pub const DEFAULT_EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    /// `(precision, recall)`, each 0 when its denominator is 0.
    pub fn precision_recall(&self) -> (f64, f64) {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        (
            ratio(self.tp, self.tp + self.fp),
            ratio(self.tp, self.tp + self.fn_),
        )
    }
}

impl Add for ClassCounts {
    type Output = ClassCounts;

    fn add(self, o: ClassCounts) -> ClassCounts {
        ClassCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub face: ClassCounts,
    pub mask: ClassCounts,
}

impl EvalCounts {
    pub fn class(&self, label: Label) -> &ClassCounts {
        match label {
            Label::Mask => &self.mask,
            _ => &self.face,
        }
    }

    fn class_mut(&mut self, label: Label) -> &mut ClassCounts {
        match label {
            Label::Mask => &mut self.mask,
            _ => &mut self.face,
        }
    }
}

impl Add for EvalCounts {
    type Output = EvalCounts;

    fn add(self, o: EvalCounts) -> EvalCounts {
        EvalCounts {
            face: self.face + o.face,
            mask: self.mask + o.mask,
        }
    }
}

impl AddAssign for EvalCounts {
    fn add_assign(&mut self, o: EvalCounts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

/// Face and mask ratios, in that order.
pub fn precision_recall(counts: &EvalCounts) -> [(Label, PrecisionRecall); 2] {
    Label::OBJECTS.map(|label| {
        let (precision, recall) = counts.class(label).precision_recall();
        (label, PrecisionRecall { precision, recall })
    })
}

/// Matches one image. Classes are handled independently; within a class,
/// detections in descending confidence order (stable) each claim the
/// unclaimed ground truth of highest IoU, if that IoU reaches `iou_thresh`.
/// IoU ties go to the earlier ground truth.
pub fn match_for_eval(
    dets: &[Detection],
    gts: &[(Label, BoundingBox)],
    iou_thresh: f64,
) -> EvalCounts {
    let mut counts = EvalCounts::default();
    for label in Label::OBJECTS {
        let mut class_dets: Vec<&Detection> = dets.iter().filter(|d| d.label == label).collect();
        class_dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let class_gts: Vec<&BoundingBox> = gts
            .iter()
            .filter(|(l, _)| *l == label)
            .map(|(_, b)| b)
            .collect();
        let mut claimed = vec![false; class_gts.len()];
        let c = counts.class_mut(label);
        for det in class_dets {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in class_gts.iter().enumerate() {
                if claimed[g] {
                    continue;
                }
                let overlap = iou(&det.bbox, gt);
                if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            match best {
                Some((g, _)) => {
                    claimed[g] = true;
                    c.tp += 1;
                }
                None => c.fp += 1,
            }
        }
        c.fn_ = claimed.iter().filter(|&&x| !x).count();
    }
    counts
}

fn to_detections(image: &ImageAnnotations) -> Vec<Detection> {
    image
        .objects
        .iter()
        .map(|o| Detection {
            bbox: o.bbox,
            label: o.label,
            confidence: o.confidence.unwrap_or(1.0),
        })
        .collect()
}

/// Sums per-image counts over the dataset. Images present on only one side
/// are matched against an empty list.
pub fn evaluate(pred: &AnnotationSet, gt: &AnnotationSet, iou_thresh: f64) -> EvalCounts {
    let mut total = EvalCounts::default();
    for image in &gt.images {
        let gts: Vec<(Label, BoundingBox)> =
            image.objects.iter().map(|o| (o.label, o.bbox)).collect();
        let dets = pred.get(&image.id).map(to_detections).unwrap_or_default();
        total += match_for_eval(&dets, &gts, iou_thresh);
    }
    for image in pred.images.iter().filter(|im| gt.get(&im.id).is_none()) {
        total += match_for_eval(&to_detections(image), &[], iou_thresh);
    }
    total
}
