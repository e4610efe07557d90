use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use maskdet::anchors::AnchorSet;
use maskdet::eval::{evaluate, precision_recall, DEFAULT_EVAL_IOU};
use maskdet::io::{
    decode_ppm, load_annotations, load_detections, save_detections, AnnotatedObject, AnnotationSet,
    ImageAnnotations, WeightStore,
};
use maskdet::postproc::{detect_image, TieBreak};
use maskdet::{
    build_model, generate_anchors, init_weights, selftest, Error, ModelConfig, Result, Thresholds,
};

#[derive(Parser)]
#[command(name = "maskdet", version, about = "Face and mask detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the detector on a PPM image or a directory of them.
    Detect {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        size: usize,
        /// Confidence threshold.
        #[arg(long, default_value_t = 0.5)]
        tc: f64,
        #[arg(long, default_value_t = 0.4)]
        nms: f64,
        /// Cross-class removal IoU threshold.
        #[arg(long, default_value_t = 0.5)]
        orcc: f64,
    },
    /// Per-class precision and recall of detections against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_IOU)]
        iou: f64,
    },
    /// Print the anchor count and per-level layout.
    Anchors {
        #[arg(long)]
        size: usize,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        strides: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        per_cell: usize,
    },
    /// Write Kaiming-initialized weights for the reference configuration.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the embedded oracle suites.
    Selftest,
}

fn ppm_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn run_detect(
    weights: &Path,
    input: &Path,
    out: &Path,
    config: ModelConfig,
    thresholds: Thresholds,
) -> Result<()> {
    let anchors = generate_anchors(&config)?;
    let model = build_model(config, WeightStore::load(weights)?)?;
    let mut set = AnnotationSet::default();
    for path in ppm_inputs(input)? {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let image = decode_ppm(&bytes)?;
        let dets = detect_image(&model, &anchors, &image, &thresholds)?;
        set.images.push(ImageAnnotations {
            id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            width: image.width as u32,
            height: image.height as u32,
            objects: dets
                .into_iter()
                .map(|d| AnnotatedObject {
                    label: d.label,
                    bbox: d.bbox,
                    confidence: Some(d.confidence),
                })
                .collect(),
        });
    }
    save_detections(&set, out)
}

fn run_eval(pred: &Path, gt: &Path, iou: f64) -> Result<()> {
    let counts = evaluate(&load_detections(pred)?, &load_annotations(gt)?, iou);
    let mut report = serde_json::Map::new();
    for (label, pr) in precision_recall(&counts) {
        println!(
            "{label} precision={:.6} recall={:.6}",
            pr.precision, pr.recall
        );
        let c = counts.class(label);
        report.insert(
            label.name().to_string(),
            json!({"tp": c.tp, "fp": c.fp, "fn": c.fn_, "precision": pr.precision, "recall": pr.recall}),
        );
    }
    report.insert("iou_threshold".into(), json!(iou));
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_anchors(size: usize, strides: &[usize], per_cell: usize) -> Result<()> {
    let anchors = AnchorSet::generate(size, strides, per_cell)?;
    println!("anchors: {}", anchors.len());
    for (i, level) in anchors.levels().iter().enumerate() {
        println!(
            "level {i}: stride {} grid {}x{} per_cell {} count {}",
            level.stride,
            level.grid_h,
            level.grid_w,
            level.anchors_per_cell,
            level.count()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Detect {
            weights,
            input,
            out,
            size,
            tc,
            nms,
            orcc,
        } => {
            let thresholds = Thresholds {
                confidence: tc,
                nms_iou: nms,
                orcc_iou: orcc,
                orcc_tie: TieBreak::RemoveMask,
            };
            run_detect(
                &weights,
                &input,
                &out,
                ModelConfig::with_input_size(size),
                thresholds,
            )?;
        }
        Command::Eval { pred, gt, iou } => run_eval(&pred, &gt, iou)?,
        Command::Anchors {
            size,
            strides,
            per_cell,
        } => run_anchors(size, &strides, per_cell)?,
        Command::InitWeights { out, seed } => {
            init_weights(&ModelConfig::default(), seed)?.save(out)?
        }
        Command::Selftest => {
            let results = selftest::run_all();
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
