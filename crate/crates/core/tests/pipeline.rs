use maskdet::anchors::{encode, AnchorSet, BoundingBox, Variances};
use maskdet::arch::{build_model, init_weights, model_forward, Predictions};
use maskdet::eval::{match_for_eval, ClassCounts};
use maskdet::loss::multibox_loss;
use maskdet::matching::{match_targets, DEFAULT_POS_THRESH};
use maskdet::postproc::{postprocess, Thresholds};
use maskdet::{generate_anchors, Label, ModelConfig, Tensor};

fn small(size: usize) -> ModelConfig {
    ModelConfig {
        input_size: size,
        fpn_channels: 16,
        ..Default::default()
    }
}

fn image(size: usize) -> Tensor {
    Tensor::from_fn([1, 3, size, size], |[_, c, y, x]| {
        ((x * 7 + y * 3 + c * 11) % 17) as f32 - 8.0
    })
}

#[test]
fn row_count_matches_anchor_count() {
    for size in [320, 640, 840] {
        let cfg = ModelConfig::with_input_size(size);
        let anchors = generate_anchors(&cfg).unwrap();
        let model = build_model(cfg.clone(), init_weights(&cfg, 5).unwrap()).unwrap();
        let pred = model_forward(&model, &image(size)).unwrap();
        assert_eq!(pred.len(), anchors.len(), "size {size}");
        assert_eq!(pred.cls.len(), anchors.len());
        assert!(pred
            .loc
            .iter()
            .flatten()
            .chain(pred.cls.iter().flatten())
            .all(|v| v.is_finite()));
    }
}

/// Bumping the class bias of one (level, anchor, class) channel must change
/// exactly the rows the anchor layout assigns to it.
#[test]
fn head_channels_map_to_anchor_rows() {
    let cfg = small(96);
    let anchors = generate_anchors(&cfg).unwrap();
    let store = init_weights(&cfg, 2).unwrap();
    let base_model = build_model(cfg.clone(), store.clone()).unwrap();
    let base = model_forward(&base_model, &image(96)).unwrap();

    let (level, k, class) = (1, 1, 2);
    let a = cfg.anchors_per_cell;
    let name = format!("head{level}.cls.bias");
    let mut bias = store.get(&name).unwrap().clone();
    bias.data_mut()[k * 3 + class] += 1.5;
    let mut bumped_store = store.clone();
    bumped_store.replace(&name, bias).unwrap();
    let bumped =
        model_forward(&build_model(cfg.clone(), bumped_store).unwrap(), &image(96)).unwrap();

    let layout = &anchors.levels()[level];
    let mut expected = vec![false; anchors.len()];
    for i in 0..layout.grid_h {
        for j in 0..layout.grid_w {
            expected[anchors.row_index(level, i, j, k)] = true;
        }
    }
    for (row, &hit) in expected.iter().enumerate() {
        let delta = bumped.cls[row][class] - base.cls[row][class];
        if hit {
            assert!((delta - 1.5).abs() < 1e-4, "row {row}");
        } else {
            assert_eq!(delta, 0.0, "row {row}");
        }
        assert_eq!(bumped.loc[row], base.loc[row]);
    }
    assert_eq!(
        expected.iter().filter(|&&e| e).count(),
        layout.grid_h * layout.grid_w
    );
    assert_eq!(a, 2);
}

/// Ground truth encoded into perfect predictions: the loss has nothing to
/// do on positives, post-processing recovers the boxes, and evaluation
/// scores them perfectly.
#[test]
fn encoded_targets_survive_the_inference_chain() {
    let size = 128;
    let anchors = AnchorSet::generate(size, &[8, 16, 32], 2).unwrap();
    let gts = [
        (
            Label::Face,
            BoundingBox::new(10.0, 12.0, 40.0, 44.0).unwrap(),
        ),
        (
            Label::Mask,
            BoundingBox::new(70.0, 60.0, 120.0, 118.0).unwrap(),
        ),
    ];
    let boxes: Vec<BoundingBox> = gts.iter().map(|g| g.1).collect();
    let labels: Vec<Label> = gts.iter().map(|g| g.0).collect();
    let targets = match_targets(
        &anchors,
        &boxes,
        &labels,
        DEFAULT_POS_THRESH,
        Variances::default(),
    )
    .unwrap();
    assert!(targets.num_positive() >= 2);

    let mut pred = Predictions {
        loc: vec![[0.0; 4]; anchors.len()],
        cls: vec![[12.0, 0.0, 0.0]; anchors.len()],
    };
    for (row, label) in targets.labels.iter().enumerate() {
        if *label != Label::Background {
            pred.loc[row] = targets.loc_targets[row].map(|v| v as f32);
            pred.cls[row] = [0.0; 3];
            pred.cls[row][label.index()] = 12.0;
        }
    }
    let loss = multibox_loss(&pred, &targets, 1.0, 3).unwrap();
    assert!(loss.l_loc < 1e-9);
    assert!(loss.total < 1e-3, "{loss:?}");

    let dets = postprocess(&pred, &anchors, size as f64, &Thresholds::default()).unwrap();
    let counts = match_for_eval(&dets, &gts, 0.5);
    assert_eq!(
        counts.face,
        ClassCounts {
            tp: 1,
            fp: 0,
            fn_: 0
        }
    );
    assert_eq!(
        counts.mask,
        ClassCounts {
            tp: 1,
            fp: 0,
            fn_: 0
        }
    );
    for (label, gt) in gts {
        let d = dets.iter().find(|d| d.label == label).unwrap();
        for (a, b) in d.bbox.to_array().iter().zip(gt.to_array()) {
            assert!((a - b).abs() < 1e-3);
        }
    }
    // Encoding round trip used above.
    let row = targets
        .matched_gt
        .iter()
        .position(|m| *m == Some(0))
        .unwrap();
    let direct = encode(&boxes[0], &anchors.anchors()[row], Variances::default()).unwrap();
    assert_eq!(direct, targets.loc_targets[row]);
}

#[test]
fn anchor_permutation_permutes_matching() {
    let anchors = AnchorSet::generate(64, &[8, 16, 32], 2).unwrap();
    let gt = [BoundingBox::new(5.0, 5.0, 30.0, 28.0).unwrap()];
    let base = match_targets(
        &anchors,
        &gt,
        &[Label::Face],
        DEFAULT_POS_THRESH,
        Variances::default(),
    )
    .unwrap();
    let mut reversed: Vec<_> = anchors.anchors().to_vec();
    reversed.reverse();
    let rev = match_targets(
        &AnchorSet::from_anchors(reversed),
        &gt,
        &[Label::Face],
        DEFAULT_POS_THRESH,
        Variances::default(),
    )
    .unwrap();
    let n = anchors.len();
    // Only the phase-1 tie rule could differ; this box has a unique best anchor.
    for i in 0..n {
        assert_eq!(base.labels[i], rev.labels[n - 1 - i]);
        assert_eq!(base.loc_targets[i], rev.loc_targets[n - 1 - i]);
    }
}
