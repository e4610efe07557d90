//! Assigns each default anchor a class label and regression target.

use crate::anchors::{encode, iou, AnchorSet, BoundingBox, Variances};
use crate::error::{Error, Result};
use crate::label::Label;

/// RetinaFace-style positive IoU threshold.
pub const DEFAULT_POS_THRESH: f64 = 0.35;

/// Per-anchor targets. `loc_targets` rows for background anchors are zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub loc_targets: Vec<[f64; 4]>,
    pub labels: Vec<Label>,
    /// Index of the ground truth each positive anchor regresses to.
    pub matched_gt: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn num_positive(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != Label::Background)
            .count()
    }
}

/// Two-phase matching.
///
/// 1. Ground truths, in order, each claim their highest-IoU anchor among those
///    not already claimed in this phase (ties to the lower anchor index). A
///    claim needs IoU > 0.
/// 2. Every unclaimed anchor whose best IoU (ties to the lower ground-truth
///    index) reaches `pos_thresh` takes that ground truth's label.
///
/// Everything else is background.
pub fn match_targets(
    anchors: &AnchorSet,
    gt_boxes: &[BoundingBox],
    gt_labels: &[Label],
    pos_thresh: f64,
    variances: Variances,
) -> Result<MatchResult> {
    if gt_boxes.len() != gt_labels.len() {
        return Err(Error::Geometry(format!(
            "{} ground-truth boxes but {} labels",
            gt_boxes.len(),
            gt_labels.len()
        )));
    }
    for (b, &l) in gt_boxes.iter().zip(gt_labels) {
        if l == Label::Background {
            return Err(Error::Geometry(
                "ground-truth label must be face or mask".into(),
            ));
        }
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(Error::Geometry(format!(
                "degenerate ground-truth box {:?}",
                b.to_array()
            )));
        }
    }

    let p = anchors.len();
    let anchor_boxes: Vec<BoundingBox> = anchors.anchors().iter().map(|a| a.to_box()).collect();
    // overlaps[g][a]
    let overlaps: Vec<Vec<f64>> = gt_boxes
        .iter()
        .map(|g| anchor_boxes.iter().map(|a| iou(g, a)).collect())
        .collect();

    let mut assigned: Vec<Option<usize>> = vec![None; p];
    let mut claimed = vec![false; p];
    for (g, row) in overlaps.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (a, &v) in row.iter().enumerate() {
            if claimed[a] || v <= 0.0 {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((a, v));
            }
        }
        if let Some((a, _)) = best {
            claimed[a] = true;
            assigned[a] = Some(g);
        }
    }

    for a in 0..p {
        if claimed[a] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (g, row) in overlaps.iter().enumerate() {
            if best.is_none_or(|(_, bv)| row[a] > bv) {
                best = Some((g, row[a]));
            }
        }
        if let Some((g, v)) = best {
            if v >= pos_thresh && v > 0.0 {
                assigned[a] = Some(g);
            }
        }
    }

    let mut loc_targets = vec![[0.0; 4]; p];
    let mut labels = vec![Label::Background; p];
    for (a, g) in assigned.iter().enumerate() {
        if let Some(g) = *g {
            labels[a] = gt_labels[g];
            loc_targets[a] = encode(&gt_boxes[g], &anchors.anchors()[a], variances)?;
        }
    }
    Ok(MatchResult {
        loc_targets,
        labels,
        matched_gt: assigned,
    })
}
