//! Box representations, IoU, and decoding of raw grid predictions.
//!
//! All boxes are stored in normalized center form: `cx, cy, w, h` are
//! fractions of the image width and height. Pixel units only appear at the
//! I/O boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner form `(x1, y1)`-`(x2, y2)` with `x1 <= x2`, `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite field in ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidBox(format!("negative size {w}x{h}")));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if x2 < x1 || y2 < y1 {
            return Err(Error::InvalidBox(format!(
                "inverted corners ({x1}, {y1})-({x2}, {y2})"
            )));
        }
        BoundingBox::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn to_corners(&self) -> Corners {
        Corners {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection over union. Two zero-area boxes give 0, never NaN.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        iou(self, other)
    }
}

impl Corners {
    pub fn to_box(&self) -> Result<BoundingBox> {
        BoundingBox::from_corners(self.x1, self.y1, self.x2, self.y2)
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ca = a.to_corners();
    let cb = b.to_corners();
    let iw = (ca.x2.min(cb.x2) - ca.x1.max(cb.x1)).max(0.0);
    let ih = (ca.y2.min(cb.y2) - ca.y1.max(cb.y1)).max(0.0);
    let inter = iw * ih;
    // Areas from the same corner extents as the intersection, so that a box
    // compared with itself gives exactly 1.
    let area_a = (ca.x2 - ca.x1) * (ca.y2 - ca.y1);
    let area_b = (cb.x2 - cb.x1) * (cb.y2 - cb.y1);
    let union = area_a + area_b - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).min(1.0)
}

/// Intersects the box with the unit square. A box entirely outside
/// collapses to zero width or height.
pub fn clip_to_unit(b: &BoundingBox) -> BoundingBox {
    let c = b.to_corners();
    let x1 = c.x1.clamp(0.0, 1.0);
    let y1 = c.y1.clamp(0.0, 1.0);
    let x2 = c.x2.clamp(0.0, 1.0).max(x1);
    let y2 = c.y2.clamp(0.0, 1.0).max(y1);
    if x1 == c.x1 && y1 == c.y1 && x2 == c.x2 && y2 == c.y2 {
        return *b;
    }
    BoundingBox {
        cx: (x1 + x2) / 2.0,
        cy: (y1 + y2) / 2.0,
        w: x2 - x1,
        h: y2 - y1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub class_id: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(class_id: usize, bbox: BoundingBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Detection {
            class_id,
            bbox,
            confidence,
        })
    }
}

/// Number of channels ahead of the class probabilities: x, y, w, h, conf.
pub const BOX_CHANNELS: usize = 5;
pub const CH_X: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_W: usize = 2;
pub const CH_H: usize = 3;
pub const CH_CONF: usize = 4;

/// Dimensions of an `S x S x B*(5+C)` prediction grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub s: usize,
    pub b: usize,
    pub num_classes: usize,
}

impl GridShape {
    pub fn new(s: usize, b: usize, num_classes: usize) -> Result<Self> {
        if s == 0 || b == 0 || num_classes == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive (s={s}, b={b}, num_classes={num_classes})"
            )));
        }
        let shape = GridShape { s, b, num_classes };
        if shape.checked_len().is_none() {
            return Err(Error::Shape("grid size overflows".into()));
        }
        Ok(shape)
    }

    pub fn channels(&self) -> usize {
        BOX_CHANNELS + self.num_classes
    }

    /// Number of (cell, box) predictors.
    pub fn num_predictors(&self) -> usize {
        self.s * self.s * self.b
    }

    pub fn len(&self) -> usize {
        self.num_predictors() * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn checked_len(&self) -> Option<usize> {
        self.s
            .checked_mul(self.s)?
            .checked_mul(self.b)?
            .checked_mul(self.num_classes.checked_add(BOX_CHANNELS)?)
    }

    /// Flat offset of the first channel of predictor `(row, col, k)`.
    pub fn offset(&self, row: usize, col: usize, k: usize) -> usize {
        ((row * self.s + col) * self.b + k) * self.channels()
    }

    /// Predictor index `(row * s + col) * b + k`.
    pub fn predictor(&self, row: usize, col: usize, k: usize) -> usize {
        (row * self.s + col) * self.b + k
    }
}

/// Raw grid output, row-major over `(row, col, box, channel)` with channels
/// `x, y, w, h, conf, class_0 .. class_{C-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    shape: GridShape,
    values: Vec<f64>,
}

impl GridTensor {
    /// Validates both the length and that every channel lies in `[0, 1]`.
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        let t = Self::from_raw(shape, values)?;
        if let Some((i, v)) = t
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Shape(format!(
                "value {v} at index {i} (channel {}) outside [0, 1]",
                i % shape.channels()
            )));
        }
        Ok(t)
    }

    /// Validates the length only. Used for optimization parameters, which
    /// are unconstrained while training.
    pub fn from_raw(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Shape(format!(
                "expected {} values for s={}, b={}, num_classes={}, found {}",
                shape.len(),
                shape.s,
                shape.b,
                shape.num_classes,
                values.len()
            )));
        }
        Ok(GridTensor { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        GridTensor {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Channels of predictor `(row, col, k)`.
    pub fn predictor(&self, row: usize, col: usize, k: usize) -> &[f64] {
        let off = self.shape.offset(row, col, k);
        &self.values[off..off + self.shape.channels()]
    }

    pub fn predictor_mut(&mut self, row: usize, col: usize, k: usize) -> &mut [f64] {
        let off = self.shape.offset(row, col, k);
        let ch = self.shape.channels();
        &mut self.values[off..off + ch]
    }
}

/// Turns cell-relative predictions into absolute detections.
///
/// For cell `(i, j)` and box `k`, the absolute center is `((j + x) / S,
/// (i + y) / S)`; `w, h` are already image-relative. Each box yields at most
/// one detection, labelled with its argmax class (lowest index on ties) and
/// scored `conf * max_prob`, kept iff the score exceeds `conf_threshold`.
pub fn decode_grid(t: &GridTensor, conf_threshold: f64) -> Vec<Detection> {
    let shape = t.shape();
    let s = shape.s as f64;
    let mut out = Vec::new();
    for i in 0..shape.s {
        for j in 0..shape.s {
            for k in 0..shape.b {
                let p = t.predictor(i, j, k);
                let (class_id, prob) = p[BOX_CHANNELS..].iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |best, (c, &v)| if v > best.1 { (c, v) } else { best },
                );
                let score = p[CH_CONF] * prob;
                if score > conf_threshold {
                    out.push(Detection {
                        class_id,
                        bbox: BoundingBox {
                            cx: (j as f64 + p[CH_X]) / s,
                            cy: (i as f64 + p[CH_Y]) / s,
                            w: p[CH_W],
                            h: p[CH_H],
                        },
                        confidence: score,
                    });
                }
            }
        }
    }
    out
}
