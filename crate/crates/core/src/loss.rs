//! Forward multibox objective: smooth-L1 on positive offsets plus softmax
//! cross-entropy on positives and hard-mined negatives, normalized by the
//! number of positives.

use crate::arch::Predictions;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::matching::MatchResult;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_NEG_RATIO: usize = 3;

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Log-softmax with the max shift.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    (-log_softmax(logits)[label]).max(0.0)
}

/// Gradient of [`cross_entropy`] with respect to the logits: softmax minus one-hot.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}

/// Picks the hardest background anchors: the `min(ratio * positives, available)`
/// highest losses, or a single one when there are no positives. Ties go to
/// the lower index. Returned indices are ascending.
pub fn hard_negative_mining(conf_loss: &[f64], labels: &[Label], ratio: usize) -> Vec<usize> {
    let n_pos = labels.iter().filter(|&&l| l != Label::Background).count();
    let mut negatives: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == Label::Background)
        .collect();
    let quota = if n_pos == 0 { 1 } else { ratio * n_pos }.min(negatives.len());
    negatives.sort_by(|&a, &b| conf_loss[b].total_cmp(&conf_loss[a]).then(a.cmp(&b)));
    let mut picked = negatives[..quota].to_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_conf_pos: f64,
    pub l_conf_neg: f64,
    pub l_loc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Number of matched anchors; the total is divided by this.
    pub normalizer: usize,
}

pub fn multibox_loss(
    pred: &Predictions,
    targets: &MatchResult,
    alpha: f64,
    ratio: usize,
) -> Result<LossBreakdown> {
    let p = pred.len();
    if targets.labels.len() != p || targets.loc_targets.len() != p {
        return Err(Error::ShapeMismatch {
            dim: "prediction rows",
            expected: targets.labels.len(),
            found: p,
        });
    }
    let logits: Vec<[f64; 3]> = pred.cls.iter().map(|r| r.map(f64::from)).collect();

    let mut l_loc = 0.0;
    let mut l_conf_pos = 0.0;
    let mut n_pos = 0;
    for (i, &label) in targets.labels.iter().enumerate() {
        if label == Label::Background {
            continue;
        }
        n_pos += 1;
        l_conf_pos += cross_entropy(&logits[i], label.index());
        for k in 0..4 {
            l_loc += smooth_l1(f64::from(pred.loc[i][k]) - targets.loc_targets[i][k]);
        }
    }

    let background_loss: Vec<f64> = logits
        .iter()
        .map(|l| cross_entropy(l, Label::Background.index()))
        .collect();
    let mined = hard_negative_mining(&background_loss, &targets.labels, ratio);
    let l_conf_neg: f64 = mined.iter().map(|&i| background_loss[i]).sum();

    let total = if n_pos == 0 {
        0.0
    } else {
        (l_conf_neg + l_conf_pos + alpha * l_loc) / n_pos as f64
    };
    Ok(LossBreakdown {
        total,
        l_conf_pos,
        l_conf_neg,
        l_loc,
        n_pos,
        n_neg: mined.len(),
        normalizer: n_pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preds(loc: Vec<[f32; 4]>, cls: Vec<[f32; 3]>) -> Predictions {
        Predictions { loc, cls }
    }

    fn targets(labels: Vec<Label>, loc: Vec<[f64; 4]>) -> MatchResult {
        MatchResult {
            matched_gt: labels
                .iter()
                .map(|&l| (l != Label::Background).then_some(0))
                .collect(),
            loc_targets: loc,
            labels,
        }
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.3, 0.3, 0.3], 1) - 3f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&[50.0, 0.0, 0.0], 0) < 1e-9);
        let stable = cross_entropy(&[1000.0, 0.0, 0.0], 0);
        assert!(stable.is_finite() && stable < 1e-12);
        assert!((cross_entropy(&[1000.0, 0.0, 0.0], 1) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn mining_takes_top_losses() {
        let labels: Vec<Label> = [Label::Face, Label::Mask]
            .into_iter()
            .chain([Label::Background; 10])
            .collect();
        let losses = vec![9.0, 9.0, 0.1, 0.9, 0.5, 0.7, 0.2, 0.8, 0.3, 0.6, 0.4, 1.0];
        let picked = hard_negative_mining(&losses, &labels, 3);
        let mut oracle: Vec<usize> = (2..12).collect();
        oracle.sort_by(|&a, &b| losses[b].partial_cmp(&losses[a]).unwrap());
        let mut top6 = oracle[..6].to_vec();
        top6.sort();
        assert_eq!(picked, top6);
    }

    #[test]
    fn mining_edge_rules() {
        let bg = vec![Label::Background; 4];
        assert_eq!(hard_negative_mining(&[0.1, 0.4, 0.4, 0.2], &bg, 3), vec![1]);
        let labels = vec![Label::Face, Label::Background, Label::Background];
        assert_eq!(
            hard_negative_mining(&[0.0, 1.0, 2.0], &labels, 3),
            vec![1, 2]
        );
    }

    #[test]
    fn three_anchor_fixture() {
        let pred = preds(
            vec![[0.5, -0.25, 1.0, 0.0], [0.0; 4], [0.0; 4]],
            vec![[0.0, 50.0, 0.0], [0.0; 3], [0.0; 3]],
        );
        let t = targets(
            vec![Label::Face, Label::Background, Label::Background],
            vec![[0.5, -0.25, 1.0, 0.0], [0.0; 4], [0.0; 4]],
        );
        let loss = multibox_loss(&pred, &t, DEFAULT_ALPHA, DEFAULT_NEG_RATIO).unwrap();
        assert_eq!(loss.l_loc, 0.0);
        assert!(loss.l_conf_pos < 1e-9);
        assert!((loss.l_conf_neg - 2.0 * 3f64.ln()).abs() < 1e-9);
        assert_eq!((loss.normalizer, loss.n_pos, loss.n_neg), (1, 1, 2));
        assert!((loss.total - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn no_positives_gives_zero() {
        let pred = preds(vec![[0.0; 4]; 3], vec![[0.0; 3]; 3]);
        let t = targets(vec![Label::Background; 3], vec![[0.0; 4]; 3]);
        let loss = multibox_loss(&pred, &t, 1.0, 3).unwrap();
        assert_eq!(loss.total, 0.0);
        assert_eq!(loss.n_neg, 1);
    }

    #[test]
    fn saturated_predictions_are_near_zero() {
        let t = targets(
            vec![
                Label::Mask,
                Label::Face,
                Label::Background,
                Label::Background,
            ],
            vec![
                [0.1, 0.2, -0.3, 0.4],
                [1.5, -2.0, 0.0, 0.25],
                [0.0; 4],
                [0.0; 4],
            ],
        );
        let pred = preds(
            t.loc_targets.iter().map(|r| r.map(|v| v as f32)).collect(),
            vec![
                [0.0, 0.0, 60.0],
                [0.0, 60.0, 0.0],
                [60.0, 0.0, 0.0],
                [60.0, 0.0, 0.0],
            ],
        );
        let loss = multibox_loss(&pred, &t, 1.0, 3).unwrap();
        assert!(loss.total < 1e-6, "{loss:?}");
    }

    #[test]
    fn row_count_mismatch() {
        let pred = preds(vec![[0.0; 4]; 2], vec![[0.0; 3]; 2]);
        let t = targets(vec![Label::Background; 3], vec![[0.0; 4]; 3]);
        assert!(multibox_loss(&pred, &t, 1.0, 3).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let h = 1e-6;
        for i in -300..=300 {
            let x = f64::from(i) / 100.0 + 1e-3;
            let fd = (smooth_l1(x + h) - smooth_l1(x - h)) / (2.0 * h);
            assert!((fd - smooth_l1_grad(x)).abs() <= 1e-4, "x={x}");
        }
        for x in [1.0, -1.0, 0.999_99, 1.000_01] {
            let fd = (smooth_l1(x + h) - smooth_l1(x - h)) / (2.0 * h);
            assert!((fd - smooth_l1_grad(x)).abs() <= 1e-4, "x={x}");
        }
        let logits = [0.3, -1.2, 2.5];
        for label in 0..3 {
            let g = cross_entropy_grad(&logits, label);
            for k in 0..3 {
                let mut up = logits;
                let mut down = logits;
                up[k] += h;
                down[k] -= h;
                let fd = (cross_entropy(&up, label) - cross_entropy(&down, label)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-4);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn loc_noise_never_decreases_l_loc(
            target in prop::array::uniform4(-3.0f64..3.0),
            noise in prop::array::uniform4(-2.0f64..2.0),
            grow in 1.0f64..4.0,
        ) {
            let t = targets(vec![Label::Face, Label::Background], vec![target, [0.0; 4]]);
            let with_error = |scale: f64| {
                let row: [f32; 4] = std::array::from_fn(|k| (target[k] + scale * noise[k]) as f32);
                preds(vec![row, [0.0; 4]], vec![[0.0; 3]; 2])
            };
            let exact = multibox_loss(&with_error(0.0), &t, 1.0, 3).unwrap().l_loc;
            let noisy = multibox_loss(&with_error(1.0), &t, 1.0, 3).unwrap().l_loc;
            let noisier = multibox_loss(&with_error(grow), &t, 1.0, 3).unwrap().l_loc;
            prop_assert!(exact <= 1e-6);
            prop_assert!(noisy + 1e-6 >= exact);
            prop_assert!(noisier + 1e-6 >= noisy);
        }

        #[test]
        fn total_invariant_to_row_permutation(
            rows in prop::collection::vec((prop::array::uniform4(-2.0f32..2.0), prop::array::uniform3(-4.0f32..4.0), 0usize..3), 2..24),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let labels: Vec<Label> = rows.iter().map(|r| Label::from_index(r.2).unwrap()).collect();
            let t = targets(labels, rows.iter().map(|r| r.0.map(|v| f64::from(v) * 0.5)).collect());
            let pred = preds(rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect());
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pt = MatchResult {
                loc_targets: order.iter().map(|&i| t.loc_targets[i]).collect(),
                labels: order.iter().map(|&i| t.labels[i]).collect(),
                matched_gt: order.iter().map(|&i| t.matched_gt[i]).collect(),
            };
            let pp = preds(order.iter().map(|&i| pred.loc[i]).collect(), order.iter().map(|&i| pred.cls[i]).collect());
            let a = multibox_loss(&pred, &t, 1.0, 3).unwrap().total;
            let b = multibox_loss(&pp, &pt, 1.0, 3).unwrap().total;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
