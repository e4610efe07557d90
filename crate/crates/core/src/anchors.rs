//! Default anchors, IoU, and the offset encoding between boxes and anchors.
//!
//! Anchor order is level-major (shallow first), then feature-map cells in
//! row-major order, then anchor index within the cell. Prediction rows follow
//! the same order.

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Axis-aligned box in corner form, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!(
                "non-finite box {:?}",
                b.to_array()
            )));
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::Geometry(format!("inverted box {:?}", b.to_array())));
        }
        Ok(b)
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Scales x by `sx` and y by `sy`.
    pub fn scale(&self, sx: f64, sy: f64) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min * sx,
            y_min: self.y_min * sy,
            x_max: self.x_max * sx,
            y_max: self.y_max * sy,
        }
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Default box in center-size form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn to_box(&self) -> BoundingBox {
        BoundingBox {
            x_min: self.cx - self.w / 2.0,
            y_min: self.cy - self.h / 2.0,
            x_max: self.cx + self.w / 2.0,
            y_max: self.cy + self.h / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelLayout {
    pub stride: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub anchors_per_cell: usize,
}

impl LevelLayout {
    pub fn count(&self) -> usize {
        self.grid_h * self.grid_w * self.anchors_per_cell
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
    levels: Vec<LevelLayout>,
}

impl AnchorSet {
    /// Square anchors centred on each cell, with sides `stride * 2^(k+1)` for
    /// anchor index `k`.
    pub fn generate(
        input_size: usize,
        strides: &[usize],
        anchors_per_cell: usize,
    ) -> Result<AnchorSet> {
        if input_size == 0 || anchors_per_cell == 0 || strides.is_empty() || strides.contains(&0) {
            return Err(Error::Config(format!(
                "cannot lay out anchors for size {input_size}, strides {strides:?}, {anchors_per_cell} per cell"
            )));
        }
        let levels: Vec<LevelLayout> = strides
            .iter()
            .map(|&stride| {
                let grid = input_size.div_ceil(stride);
                LevelLayout {
                    stride,
                    grid_h: grid,
                    grid_w: grid,
                    anchors_per_cell,
                }
            })
            .collect();
        let mut anchors = Vec::with_capacity(levels.iter().map(LevelLayout::count).sum());
        for level in &levels {
            let s = level.stride as f64;
            for i in 0..level.grid_h {
                for j in 0..level.grid_w {
                    for k in 0..anchors_per_cell {
                        let side = s * f64::from(2u32 << k);
                        anchors.push(Anchor {
                            cx: (j as f64 + 0.5) * s,
                            cy: (i as f64 + 0.5) * s,
                            w: side,
                            h: side,
                        });
                    }
                }
            }
        }
        Ok(AnchorSet { anchors, levels })
    }

    /// Arbitrary anchor list treated as a single level of 1x`len` cells.
    pub fn from_anchors(anchors: Vec<Anchor>) -> AnchorSet {
        let levels = vec![LevelLayout {
            stride: 0,
            grid_h: 1,
            grid_w: anchors.len(),
            anchors_per_cell: 1,
        }];
        AnchorSet { anchors, levels }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn levels(&self) -> &[LevelLayout] {
        &self.levels
    }

    /// Row index of `(level, cell row, cell column, anchor)`.
    pub fn row_index(&self, level: usize, i: usize, j: usize, k: usize) -> usize {
        let offset: usize = self.levels[..level].iter().map(LevelLayout::count).sum();
        let l = &self.levels[level];
        offset + (i * l.grid_w + j) * l.anchors_per_cell + k
    }
}

pub fn generate_anchors(config: &ModelConfig) -> Result<AnchorSet> {
    config.validate()?;
    AnchorSet::generate(config.input_size, &config.strides, config.anchors_per_cell)
}

/// Scale factors applied to center and log-size offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variances {
    pub center: f64,
    pub size: f64,
}

impl Default for Variances {
    fn default() -> Self {
        Variances {
            center: 0.1,
            size: 0.2,
        }
    }
}

pub fn encode(gt: &BoundingBox, anchor: &Anchor, var: Variances) -> Result<[f64; 4]> {
    let (gw, gh) = (gt.width(), gt.height());
    if !(gw > 0.0 && gh > 0.0) {
        return Err(Error::Geometry(format!(
            "cannot encode box with non-positive extent {:?}",
            gt.to_array()
        )));
    }
    let (gcx, gcy) = gt.center();
    Ok([
        (gcx - anchor.cx) / (anchor.w * var.center),
        (gcy - anchor.cy) / (anchor.h * var.center),
        (gw / anchor.w).ln() / var.size,
        (gh / anchor.h).ln() / var.size,
    ])
}

/// Inverse of [`encode`], clipped to `[0, image_size]`.
pub fn decode(offsets: &[f64; 4], anchor: &Anchor, var: Variances, image_size: f64) -> BoundingBox {
    let cx = anchor.cx + offsets[0] * var.center * anchor.w;
    let cy = anchor.cy + offsets[1] * var.center * anchor.h;
    let w = anchor.w * (offsets[2] * var.size).exp();
    let h = anchor.h * (offsets[3] * var.size).exp();
    let clip = |v: f64| {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, image_size)
        }
    };
    BoundingBox {
        x_min: clip(cx - w / 2.0),
        y_min: clip(cy - h / 2.0),
        x_max: clip(cx + w / 2.0),
        y_max: clip(cy + h / 2.0),
    }
}
