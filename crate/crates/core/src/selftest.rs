//! Randomized comparisons of the optimized paths against the naive oracles
//! in [`crate::reference`], plus hand-computed fixtures. Used by the
//! `selftest` subcommand and the acceptance gate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::{decode, encode, iou, Anchor, AnchorSet, BoundingBox, Variances};
use crate::arch::Predictions;
use crate::kernels::{conv2d, pool2d, upsample_nearest, ConvParams, PoolMode};
use crate::label::Label;
use crate::loss::{cross_entropy, cross_entropy_grad, multibox_loss, smooth_l1, smooth_l1_grad};
use crate::matching::{match_targets, DEFAULT_POS_THRESH};
use crate::postproc::{nms, orcc, Detection, TieBreak};
use crate::reference;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &'static str, failures: Vec<String>, summary: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed { summary } else { failures.join("; ") };
        SuiteResult {
            name,
            passed,
            detail,
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn diff(got: &Tensor, want: &Tensor) -> f32 {
    if got.shape() == want.shape() {
        got.max_abs_diff(want)
    } else {
        f32::INFINITY
    }
}

/// Random convolutions (dense, grouped, depthwise), pools and upsamples.
/// `cases` counts each kernel comparison separately.
pub fn kernel_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst = 0.0f32;
    let mut record = |what: String, err: Option<f32>, failures: &mut Vec<String>| match err {
        Some(e) if e <= 1e-5 => worst = worst.max(e),
        Some(e) => failures.push(format!("{what}: max abs error {e:e}")),
        None => failures.push(format!("{what}: kernel returned an error")),
    };
    for case in 0..cases {
        let n = rng.random_range(1..=2);
        let h = rng.random_range(3..=12);
        let w = rng.random_range(3..=12);
        match case % 4 {
            0 | 1 => {
                let groups = rng.random_range(1..=3);
                let depthwise = case % 4 == 1;
                let in_c = if depthwise {
                    rng.random_range(1..=6)
                } else {
                    groups * rng.random_range(1..=3)
                };
                let (groups, out_c) = if depthwise {
                    (in_c, in_c)
                } else {
                    (groups, groups * rng.random_range(1..=3))
                };
                let k = rng.random_range(1..=3.min(h).min(w));
                let stride = rng.random_range(1..=2);
                let pad = rng.random_range(0..=k / 2 + 1);
                let input = random_tensor(&mut rng, [n, in_c, h, w]);
                let weight = random_tensor(&mut rng, [out_c, in_c / groups, k, k]);
                let bias: Vec<f32> = (0..out_c).map(|_| rng.random_range(-1.0..1.0)).collect();
                let params = ConvParams::new(&weight)
                    .bias(&bias)
                    .stride(stride)
                    .padding(pad)
                    .groups(groups);
                let expected = reference::conv2d(
                    &input,
                    &weight,
                    Some(&bias),
                    (stride, stride),
                    (pad, pad),
                    groups,
                );
                let err = conv2d(&input, &params).ok().map(|t| diff(&t, &expected));
                record(format!("conv case {case}"), err, &mut failures);
            }
            2 => {
                let c = rng.random_range(1..=4);
                let win = rng.random_range(1..=3);
                let stride = rng.random_range(1..=2);
                let input = random_tensor(&mut rng, [n, c, h, w]);
                for (mode, expected) in [
                    (
                        PoolMode::Max,
                        reference::max_pool(&input, (win, win), (stride, stride)),
                    ),
                    (
                        PoolMode::Avg,
                        reference::avg_pool(&input, (win, win), (stride, stride)),
                    ),
                ] {
                    let err = pool2d(&input, mode, (win, win), (stride, stride))
                        .ok()
                        .map(|t| diff(&t, &expected));
                    record(format!("{mode:?} pool case {case}"), err, &mut failures);
                }
            }
            _ => {
                let c = rng.random_range(1..=4);
                let factor = rng.random_range(1..=3);
                let input = random_tensor(&mut rng, [n, c, h, w]);
                let expected = reference::upsample_nearest(&input, factor);
                let err = upsample_nearest(&input, factor)
                    .ok()
                    .map(|t| diff(&t, &expected));
                record(format!("upsample case {case}"), err, &mut failures);
            }
        }
    }
    SuiteResult::new(
        "kernels",
        failures,
        format!("{cases} cases, max abs error {worst:e}"),
    )
}

/// IoU hand cases and properties, encode/decode round trips, anchor counts.
pub fn geometry_suite(pairs: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let b = |v: [f64; 4]| BoundingBox::from_array(v).expect("fixture box");
    let unit = b([0.0, 0.0, 10.0, 10.0]);
    let fixtures = [
        (unit, unit, 1.0),
        (unit, b([20.0, 20.0, 30.0, 30.0]), 0.0),
        (unit, b([5.0, 0.0, 15.0, 10.0]), 1.0 / 3.0),
        (unit, b([1.0, 1.0, 11.0, 11.0]), 81.0 / 119.0),
        (unit, b([10.0, 0.0, 20.0, 10.0]), 0.0),
    ];
    for (i, (x, y, want)) in fixtures.iter().enumerate() {
        let got = iou(x, y);
        if (got - want).abs() > 1e-12 {
            failures.push(format!("IoU fixture {i}: {got} != {want}"));
        }
    }
    let mut worst = 0.0f64;
    let var = Variances::default();
    for case in 0..pairs {
        let rand_box = |rng: &mut ChaCha8Rng| {
            let x = rng.random_range(0.0..600.0);
            let y = rng.random_range(0.0..600.0);
            b([
                x,
                y,
                x + rng.random_range(1.0..40.0),
                y + rng.random_range(1.0..40.0),
            ])
        };
        let (p, q) = (rand_box(&mut rng), rand_box(&mut rng));
        let (pq, qp) = (iou(&p, &q), iou(&q, &p));
        if pq != qp || !(0.0..=1.0).contains(&pq) {
            failures.push(format!("IoU property case {case}: {pq} vs {qp}"));
        }
        let anchor = Anchor {
            cx: rng.random_range(0.0..640.0),
            cy: rng.random_range(0.0..640.0),
            w: rng.random_range(8.0..512.0),
            h: rng.random_range(8.0..512.0),
        };
        match encode(&p, &anchor, var) {
            Ok(offsets) => {
                let back = decode(&offsets, &anchor, var, 640.0).to_array();
                for (a, e) in back.iter().zip(p.to_array()) {
                    worst = worst.max((a - e).abs());
                }
            }
            Err(e) => failures.push(format!("encode case {case}: {e}")),
        }
    }
    if worst > 1e-5 {
        failures.push(format!("round-trip error {worst:e}"));
    }
    for (size, want) in [(640, 16800), (840, 29126)] {
        match AnchorSet::generate(size, &[8, 16, 32], 2) {
            Ok(a) if a.len() == want => {}
            Ok(a) => failures.push(format!("size {size}: {} anchors, expected {want}", a.len())),
            Err(e) => failures.push(format!("size {size}: {e}")),
        }
    }
    SuiteResult::new(
        "geometry",
        failures,
        format!("{pairs} round trips, max error {worst:e}"),
    )
}

fn random_detections(rng: &mut ChaCha8Rng, label: Label, max: usize) -> Vec<Detection> {
    let count = rng.random_range(0..=max);
    (0..count)
        .map(|_| {
            let x = rng.random_range(0.0..80.0);
            let y = rng.random_range(0.0..80.0);
            // Quantized confidences make ties common.
            let confidence = f64::from(rng.random_range(0..20u32)) / 20.0;
            Detection {
                bbox: BoundingBox::from_array([
                    x,
                    y,
                    x + rng.random_range(2.0..40.0),
                    y + rng.random_range(2.0..40.0),
                ])
                .expect("positive extent"),
                label,
                confidence,
            }
        })
        .collect()
}

pub fn nms_suite(sets: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for set in 0..sets {
        let cands = random_detections(&mut rng, Label::Face, 50);
        let thresh = rng.random_range(0.1..0.9);
        if nms(&cands, thresh) != reference::nms(&cands, thresh) {
            failures.push(format!(
                "set {set} ({} boxes) differs from reference",
                cands.len()
            ));
        }
    }
    SuiteResult::new(
        "nms",
        failures,
        format!("{sets} sets identical to reference"),
    )
}

/// Hand-traced fixtures, then random sets against the fixed-point oracle.
pub fn orcc_suite(sets: usize, seed: u64) -> SuiteResult {
    let mut failures = Vec::new();
    let det = |label, v: [f64; 4], confidence| Detection {
        bbox: BoundingBox::from_array(v).expect("fixture box"),
        label,
        confidence,
    };
    let face = det(Label::Face, [0.0, 0.0, 10.0, 10.0], 0.9);
    let mask = det(Label::Mask, [1.0, 1.0, 11.0, 11.0], 0.8);
    if orcc(&[face], &[mask], 0.4, TieBreak::RemoveMask) != (vec![face], vec![]) {
        failures.push("81/119 fixture".into());
    }
    let weak = det(Label::Face, [0.0, 0.0, 10.0, 10.0], 0.6);
    let m1 = det(Label::Mask, [1.0, 1.0, 11.0, 11.0], 0.7);
    let m2 = det(Label::Mask, [0.0, 1.0, 10.0, 11.0], 0.5);
    if orcc(&[weak], &[m1, m2], 0.4, TieBreak::RemoveMask) != (vec![], vec![m1, m2]) {
        failures.push("face-removed-early fixture".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for set in 0..sets {
        let faces = random_detections(&mut rng, Label::Face, 15);
        let masks = random_detections(&mut rng, Label::Mask, 15);
        let thresh = rng.random_range(0.1..0.9);
        let tie = if set % 2 == 0 {
            TieBreak::RemoveMask
        } else {
            TieBreak::RemoveFace
        };
        if orcc(&faces, &masks, thresh, tie)
            != reference::orcc_fixed_point(&faces, &masks, thresh, tie)
        {
            failures.push(format!("set {set} differs from fixed-point oracle"));
        }
    }
    SuiteResult::new(
        "orcc",
        failures,
        format!("fixtures exact, {sets} sets identical to oracle"),
    )
}

/// Three anchors, one matched face with a confident logit and exact offsets,
/// two background anchors with uniform logits: both negatives are mined,
/// so the total is `2 ln 3`.
pub fn loss_fixture() -> Result<f64, String> {
    let anchors = AnchorSet::from_anchors(vec![
        Anchor {
            cx: 10.0,
            cy: 10.0,
            w: 20.0,
            h: 20.0,
        },
        Anchor {
            cx: 100.0,
            cy: 100.0,
            w: 20.0,
            h: 20.0,
        },
        Anchor {
            cx: 200.0,
            cy: 200.0,
            w: 20.0,
            h: 20.0,
        },
    ]);
    let gt = BoundingBox::from_array([0.0, 0.0, 20.0, 20.0]).map_err(|e| e.to_string())?;
    let targets = match_targets(
        &anchors,
        &[gt],
        &[Label::Face],
        DEFAULT_POS_THRESH,
        Variances::default(),
    )
    .map_err(|e| e.to_string())?;
    let pred = Predictions {
        loc: targets
            .loc_targets
            .iter()
            .map(|t| t.map(|v| v as f32))
            .collect(),
        cls: vec![[0.0, 50.0, 0.0], [0.0; 3], [0.0; 3]],
    };
    let loss = multibox_loss(&pred, &targets, 1.0, 3).map_err(|e| e.to_string())?;
    if loss.n_pos != 1 {
        return Err(format!("expected one positive, got {}", loss.n_pos));
    }
    Ok(loss.total)
}

/// Largest gap between analytic and central-difference derivatives of
/// smooth-L1 and cross-entropy over random points.
pub fn derivative_gap(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..points {
        // Stay clear of the smooth-L1 kink at |x| = 1.
        let x: f64 = rng.random_range(-3.0..3.0);
        if (x.abs() - 1.0).abs() > 1e-3 {
            let fd = (smooth_l1(x + h) - smooth_l1(x - h)) / (2.0 * h);
            worst = worst.max((fd - smooth_l1_grad(x)).abs());
        }
        let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let label = rng.random_range(0..3);
        let grad = cross_entropy_grad(&logits, label);
        for k in 0..3 {
            let (mut up, mut down) = (logits.clone(), logits.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (cross_entropy(&up, label) - cross_entropy(&down, label)) / (2.0 * h);
            worst = worst.max((fd - grad[k]).abs());
        }
    }
    worst
}

pub fn loss_suite() -> SuiteResult {
    let mut failures = Vec::new();
    let want = 2.0 * 3f64.ln();
    match loss_fixture() {
        Ok(total) if (total - want).abs() <= 1e-4 => {}
        Ok(total) => failures.push(format!("fixture total {total}, expected {want}")),
        Err(e) => failures.push(format!("fixture: {e}")),
    }
    let gap = derivative_gap(500, 11);
    if gap > 1e-4 {
        failures.push(format!("finite-difference gap {gap:e}"));
    }
    SuiteResult::new(
        "loss",
        failures,
        format!("fixture 2 ln 3, derivative gap {gap:e}"),
    )
}

/// Everything the `selftest` subcommand runs.
pub fn run_all() -> Vec<SuiteResult> {
    vec![
        kernel_suite(120, 1),
        geometry_suite(10_000, 2),
        nms_suite(1000, 3),
        orcc_suite(1000, 4),
        loss_suite(),
    ]
}
