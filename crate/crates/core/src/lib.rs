//! Single-shot face and mask detection from scratch: NCHW kernels, a
//! depthwise-separable backbone with an FPN neck and context-attention
//! heads, anchor matching, the multibox loss, post-processing, and a
//! precision/recall evaluator.

pub mod anchors;
pub mod arch;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod label;
pub mod loss;
pub mod matching;
pub mod postproc;
pub mod reference;
pub mod selftest;
pub mod tensor;

pub use anchors::{generate_anchors, iou, AnchorSet, BoundingBox};
pub use arch::{build_model, init_weights, model_forward, Model, Predictions};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use label::Label;
pub use postproc::{detect, Detection, Thresholds};
pub use tensor::Tensor;
