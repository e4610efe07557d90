//! File formats: `RFMW` weights, binary PPM images, and the annotation /
//! detection JSON interchange.

mod annotations;
mod image;
mod weights;

pub use annotations::{
    load_annotations, load_detections, parse_annotations, parse_detections, render_detections,
    save_detections, AnnotatedObject, AnnotationSet, ImageAnnotations, ImageDetections,
};
pub use image::{decode_ppm, encode_ppm, load_image, preprocess, RgbImage, DEFAULT_MEANS};
pub use weights::{WeightStore, MAGIC};
