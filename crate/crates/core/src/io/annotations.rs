//! Annotation and detection JSON.
//!
//! ```json
//! {"images": [{"id": "a", "width": 640, "height": 480,
//!              "objects": [{"class": "face", "box": [x_min, y_min, x_max, y_max]}]}]}
//! ```
//!
//! Detection files add `"confidence"` to each object. Output is canonical:
//! fixed key order, two-space indentation, one object per line, and every
//! float printed with 6 decimals, so a load/save cycle reproduces the bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::anchors::BoundingBox;
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedObject {
    pub label: Label,
    pub bbox: BoundingBox,
    /// Present for detections, absent for ground truth.
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotations {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
}

/// Detections share the annotation layout.
pub type ImageDetections = ImageAnnotations;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub images: Vec<ImageAnnotations>,
}

impl AnnotationSet {
    pub fn get(&self, id: &str) -> Option<&ImageAnnotations> {
        self.images.iter().find(|im| im.id == id)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    GroundTruth,
    Detections,
}

fn missing(id: &str, field: &str) -> Error {
    Error::MissingField {
        id: id.to_string(),
        field: field.to_string(),
    }
}

fn parse_extent(obj: &Map<String, Value>, id: &str, field: &str) -> Result<u32> {
    obj.get(field)
        .and_then(Value::as_u64)
        .filter(|&v| v > 0)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| missing(id, field))
}

fn parse_object(
    value: &Value,
    id: &str,
    width: u32,
    height: u32,
    kind: Kind,
) -> Result<AnnotatedObject> {
    let obj = value.as_object().ok_or_else(|| missing(id, "objects[]"))?;
    let class = obj
        .get("class")
        .and_then(Value::as_str)
        .ok_or_else(|| missing(id, "class"))?;
    let label = Label::parse_object(class).ok_or_else(|| Error::UnknownClass {
        id: id.to_string(),
        class: class.to_string(),
    })?;
    let coords: Vec<f64> = obj
        .get("box")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 4)
        .and_then(|a| a.iter().map(Value::as_f64).collect())
        .ok_or_else(|| missing(id, "box"))?;
    let raw = [coords[0], coords[1], coords[2], coords[3]];
    let invalid = |reason| Error::InvalidBox {
        id: id.to_string(),
        bbox: raw,
        reason,
    };
    if raw[0] > raw[2] || raw[1] > raw[3] {
        return Err(invalid("inverted"));
    }
    if raw[0] < 0.0 || raw[1] < 0.0 || raw[2] > f64::from(width) || raw[3] > f64::from(height) {
        return Err(invalid("outside image extents"));
    }
    if kind == Kind::GroundTruth && (raw[0] == raw[2] || raw[1] == raw[3]) {
        return Err(invalid("zero area"));
    }
    let bbox = BoundingBox::from_array(raw).map_err(|_| invalid("non-finite"))?;
    let confidence = match kind {
        Kind::GroundTruth => None,
        Kind::Detections => {
            let c = obj
                .get("confidence")
                .and_then(Value::as_f64)
                .filter(|c| (0.0..=1.0).contains(c))
                .ok_or_else(|| missing(id, "confidence"))?;
            Some(c)
        }
    };
    Ok(AnnotatedObject {
        label,
        bbox,
        confidence,
    })
}

fn parse(text: &str, kind: Kind) -> Result<AnnotationSet> {
    let root: Value = serde_json::from_str(text)?;
    let images = root
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| missing("<root>", "images"))?;
    let mut out = Vec::with_capacity(images.len());
    for (index, image) in images.iter().enumerate() {
        let placeholder = format!("<image #{index}>");
        let obj = image
            .as_object()
            .ok_or_else(|| missing(&placeholder, "image"))?;
        let id = obj
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| missing(&placeholder, "id"))?
            .to_string();
        let width = parse_extent(obj, &id, "width")?;
        let height = parse_extent(obj, &id, "height")?;
        let objects = obj
            .get("objects")
            .and_then(Value::as_array)
            .ok_or_else(|| missing(&id, "objects"))?
            .iter()
            .map(|o| parse_object(o, &id, width, height, kind))
            .collect::<Result<Vec<_>>>()?;
        out.push(ImageAnnotations {
            id,
            width,
            height,
            objects,
        });
    }
    Ok(AnnotationSet { images: out })
}

/// Ground truth: no confidences; zero-area boxes are rejected.
pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    parse(text, Kind::GroundTruth)
}

/// Detections: every object needs a confidence in `[0, 1]`.
pub fn parse_detections(text: &str) -> Result<AnnotationSet> {
    parse(text, Kind::Detections)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    parse_annotations(&read(path.as_ref())?)
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    parse_detections(&read(path.as_ref())?)
}

/// Canonical text for an annotation or detection set.
pub fn render_detections(set: &AnnotationSet) -> String {
    let mut s = String::from("{\n  \"images\": [");
    for (i, image) in set.images.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        let id = serde_json::to_string(&image.id).expect("string serializes");
        let _ = write!(
            s,
            "    {{\n      \"id\": {id},\n      \"width\": {},\n      \"height\": {},\n      \"objects\": [",
            image.width, image.height
        );
        for (j, o) in image.objects.iter().enumerate() {
            s.push_str(if j == 0 { "\n" } else { ",\n" });
            let b = o.bbox;
            let _ = write!(
                s,
                "        {{\"class\": \"{}\", \"box\": [{:.6}, {:.6}, {:.6}, {:.6}]",
                o.label, b.x_min, b.y_min, b.x_max, b.y_max
            );
            if let Some(c) = o.confidence {
                let _ = write!(s, ", \"confidence\": {c:.6}");
            }
            s.push('}');
        }
        if !image.objects.is_empty() {
            s.push_str("\n      ");
        }
        s.push_str("]\n    }");
    }
    if !set.images.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("]\n}\n");
    s
}

pub fn save_detections(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_detections(set)).map_err(|e| Error::io(path, e))
}
