//! Geometric and photometric augmentation with consistent box updates.
//!
//! Resampling is nearest-neighbor throughout. Rotation is about the image
//! center; a rotated box becomes the axis-aligned hull of its rotated
//! corners, clipped to the frame, and is dropped when less than
//! `min_box_retention` of its original area survives the clip.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip_to_unit, BoundingBox, GroundTruthBox};

/// Largest rotation drawn by [`sample_theta`]: 30 degrees.
pub const MAX_ROTATION: f64 = PI / 6.0;
pub const DEFAULT_MIN_BOX_RETENTION: f64 = 0.25;

/// Row-major, channel-interleaved pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidArgument("image size overflows".into()))?;
        if pixels.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} pixel values, found {}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        let n = width.saturating_mul(height).saturating_mul(channels);
        ImageBuffer::new(width, height, channels, vec![value; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let off = (y * self.width + x) * self.channels;
        &self.pixels[off..off + self.channels]
    }

    fn blank(&self, width: usize, height: usize) -> ImageBuffer {
        ImageBuffer {
            width,
            height,
            channels: self.channels,
            pixels: vec![0.0; width * height * self.channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Rotation angle in radians.
    pub theta: f64,
    pub scale: f64,
    pub hflip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub min_box_retention: f64,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            theta: 0.0,
            scale: 1.0,
            hflip: false,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            min_box_retention: DEFAULT_MIN_BOX_RETENTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.theta.is_finite() {
            return bad(format!("theta must be finite, got {}", self.theta));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if !(self.brightness.is_finite() && self.brightness > 0.0) {
            return bad(format!(
                "brightness must be positive, got {}",
                self.brightness
            ));
        }
        if !(self.contrast.is_finite() && self.contrast > 0.0) {
            return bad(format!("contrast must be positive, got {}", self.contrast));
        }
        if !(self.saturation.is_finite() && self.saturation >= 0.0) {
            return bad(format!(
                "saturation must be non-negative, got {}",
                self.saturation
            ));
        }
        if !(self.min_box_retention > 0.0 && self.min_box_retention <= 1.0) {
            return bad(format!(
                "min_box_retention must be in (0, 1], got {}",
                self.min_box_retention
            ));
        }
        Ok(())
    }
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self::identity()
    }
}

/// Uniform rotation angle in `[-30 deg, 30 deg]`.
pub fn sample_theta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(-MAX_ROTATION..=MAX_ROTATION)
}

/// Axis-aligned hull of the box's corners rotated by `theta` about the
/// center of a `width x height` frame. Not clipped.
pub fn rotate_box(b: &BoundingBox, theta: f64, width: usize, height: usize) -> BoundingBox {
    let (w, h) = (width as f64, height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (sin, cos) = theta.sin_cos();
    let c = b.to_corners();
    let (mut x1, mut y1, mut x2, mut y2) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (px, py) in [(c.x1, c.y1), (c.x2, c.y1), (c.x1, c.y2), (c.x2, c.y2)] {
        let dx = px * w - cx;
        let dy = py * h - cy;
        let rx = (cos * dx - sin * dy + cx) / w;
        let ry = (sin * dx + cos * dy + cy) / h;
        x1 = x1.min(rx);
        y1 = y1.min(ry);
        x2 = x2.max(rx);
        y2 = y2.max(ry);
    }
    BoundingBox {
        cx: (x1 + x2) / 2.0,
        cy: (y1 + y2) / 2.0,
        w: x2 - x1,
        h: y2 - y1,
    }
}

pub fn rotate(
    img: &ImageBuffer,
    boxes: &[GroundTruthBox],
    theta: f64,
    min_box_retention: f64,
) -> (ImageBuffer, Vec<GroundTruthBox>) {
    if theta == 0.0 {
        return (img.clone(), boxes.to_vec());
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = theta.sin_cos();
    let mut out = img.blank(w, h);
    for y in 0..h {
        let py = y as f64 + 0.5 - cy;
        for x in 0..w {
            let px = x as f64 + 0.5 - cx;
            // Inverse rotation: where did this output pixel come from?
            let sx = (cos * px + sin * py + cx).floor();
            let sy = (-sin * px + cos * py + cy).floor();
            if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let src = (sy as usize * w + sx as usize) * ch;
            let dst = (y * w + x) * ch;
            out.pixels[dst..dst + ch].copy_from_slice(&img.pixels[src..src + ch]);
        }
    }
    let kept = boxes
        .iter()
        .filter_map(|gt| {
            let clipped = clip_to_unit(&rotate_box(&gt.bbox, theta, w, h));
            (clipped.area() >= min_box_retention * gt.bbox.area()).then_some(GroundTruthBox {
                class_id: gt.class_id,
                bbox: clipped,
            })
        })
        .collect();
    (out, kept)
}

/// Nearest-neighbor resize: output pixel `x` samples source column
/// `floor((x + 0.5) * W / W')`.
pub fn resize_nearest(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be at least 1x1, got {width}x{height}"
        )));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let ch = img.channels;
    let col_map: Vec<usize> = (0..width)
        .map(|x| (((x as f64 + 0.5) * img.width as f64 / width as f64) as usize).min(img.width - 1))
        .collect();
    let mut out = img.blank(width, height);
    for y in 0..height {
        let sy =
            (((y as f64 + 0.5) * img.height as f64 / height as f64) as usize).min(img.height - 1);
        for (x, &sx) in col_map.iter().enumerate() {
            let src = (sy * img.width + sx) * ch;
            let dst = (y * width + x) * ch;
            out.pixels[dst..dst + ch].copy_from_slice(&img.pixels[src..src + ch]);
        }
    }
    Ok(out)
}

/// Resizes by `s`; normalized boxes are unchanged.
pub fn scale(
    img: &ImageBuffer,
    boxes: &[GroundTruthBox],
    s: f64,
) -> Result<(ImageBuffer, Vec<GroundTruthBox>)> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {s}"
        )));
    }
    let w = (s * img.width as f64).round();
    let h = (s * img.height as f64).round();
    if w < 1.0 || h < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "scale {s} shrinks {}x{} to an empty image",
            img.width, img.height
        )));
    }
    Ok((resize_nearest(img, w as usize, h as usize)?, boxes.to_vec()))
}

pub fn hflip(img: &ImageBuffer, boxes: &[GroundTruthBox]) -> (ImageBuffer, Vec<GroundTruthBox>) {
    let (w, ch) = (img.width, img.channels);
    let mut out = img.blank(w, img.height);
    for y in 0..img.height {
        for x in 0..w {
            let src = (y * w + x) * ch;
            let dst = (y * w + (w - 1 - x)) * ch;
            out.pixels[dst..dst + ch].copy_from_slice(&img.pixels[src..src + ch]);
        }
    }
    let flipped = boxes
        .iter()
        .map(|gt| GroundTruthBox {
            class_id: gt.class_id,
            bbox: BoundingBox {
                cx: 1.0 - gt.bbox.cx,
                ..gt.bbox
            },
        })
        .collect();
    (out, flipped)
}

/// Brightness, then contrast about the image mean, then saturation about
/// the per-pixel luminance. Every step clamps to `[0, 1]`; a factor of
/// exactly 1 leaves its step out.
pub fn color_jitter(
    img: &ImageBuffer,
    brightness: f64,
    contrast: f64,
    saturation: f64,
) -> ImageBuffer {
    let mut out = img.clone();
    if brightness != 1.0 {
        for p in &mut out.pixels {
            *p = (*p * brightness).clamp(0.0, 1.0);
        }
    }
    if contrast != 1.0 {
        // Running mean stays exact on constant images.
        let mut mean = 0.0;
        for (k, &p) in out.pixels.iter().enumerate() {
            mean += (p - mean) / (k + 1) as f64;
        }
        for p in &mut out.pixels {
            *p = ((*p - mean) * contrast + mean).clamp(0.0, 1.0);
        }
    }
    if saturation != 1.0 && out.channels == 3 {
        for px in out.pixels.chunks_exact_mut(3) {
            let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            for p in px.iter_mut() {
                *p = (gray + saturation * (*p - gray)).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Color jitter, then flip, then scale, then rotation.
pub fn compose(
    img: &ImageBuffer,
    boxes: &[GroundTruthBox],
    spec: &AugmentationSpec,
) -> Result<(ImageBuffer, Vec<GroundTruthBox>)> {
    spec.validate()?;
    let img = color_jitter(img, spec.brightness, spec.contrast, spec.saturation);
    let (img, boxes) = if spec.hflip {
        hflip(&img, boxes)
    } else {
        (img, boxes.to_vec())
    };
    let (img, boxes) = scale(&img, &boxes, spec.scale)?;
    Ok(rotate(&img, &boxes, spec.theta, spec.min_box_retention))
}
