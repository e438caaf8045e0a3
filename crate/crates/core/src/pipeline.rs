//! End-to-end preprocessing, dataset evaluation and the post-processing
//! latency benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{resize_nearest, ImageBuffer};
use crate::error::{Error, Result};
use crate::geometry::{
    decode_grid, Detection, GridShape, GridTensor, BOX_CHANNELS, CH_CONF, CH_H, CH_W, CH_X, CH_Y,
};
use crate::ingest::{load_detections, load_labels, DatasetManifest};
use crate::metrics::{evaluate_frames, Frame, ThresholdSweep, DEFAULT_IOU_THRESHOLDS};
use crate::postprocess::{filter_by_score, nms, DEFAULT_NMS_IOU};

pub const DEFAULT_INPUT_SIZE: usize = 640;
pub const WARMUP_RUNS: usize = 3;
pub const MIN_BENCH_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_width: usize,
    pub target_height: usize,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            target_width: DEFAULT_INPUT_SIZE,
            target_height: DEFAULT_INPUT_SIZE,
            mu: 0.0,
            sigma: 1.0,
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_width == 0 || self.target_height == 0 {
            return Err(Error::InvalidArgument(
                "target dimensions must be positive".into(),
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need finite mu and positive sigma, got mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }
}

/// Nearest-neighbor resize followed by `(v - mu) / sigma`, laid out
/// planar (channel-major).
pub fn preprocess(img: &ImageBuffer, spec: &PreprocessSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let resized = resize_nearest(img, spec.target_width, spec.target_height)?;
    let ch = resized.channels();
    let plane = spec.target_width * spec.target_height;
    let mut out = vec![0.0; plane * ch];
    for (i, px) in resized.pixels().chunks_exact(ch).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * plane + i] = (v - spec.mu) / spec.sigma;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub nms_iou: f64,
    pub score_cut: f64,
    pub class_aware: bool,
    /// Worker threads used to load and post-process images.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: DEFAULT_IOU_THRESHOLDS.to_vec(),
            nms_iou: DEFAULT_NMS_IOU,
            score_cut: 0.0,
            class_aware: true,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub num_images: usize,
    pub sweep: ThresholdSweep,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every item, applies the score cut and NMS to its detections, and
/// matches them against the labels at each IoU threshold.
pub fn evaluate_dataset(
    manifest: &DatasetManifest,
    base_dir: &Path,
    cfg: &EvalConfig,
) -> Result<EvaluationReport> {
    if manifest.items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.iou_thresholds.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one IoU threshold is required".into(),
        ));
    }
    for &t in cfg
        .iou_thresholds
        .iter()
        .chain([&cfg.nms_iou, &cfg.score_cut])
    {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "threshold {t} outside [0, 1]"
            )));
        }
    }
    let num_classes = manifest.num_classes();
    let load = |item: &crate::ingest::ManifestItem| -> Result<Frame> {
        let ground_truth = load_labels(&resolve(base_dir, &item.labels), Some(num_classes))?;
        let detections = match &item.detections {
            Some(p) => load_detections(&resolve(base_dir, p), Some(num_classes))?,
            None => Vec::new(),
        };
        let detections = nms(
            &filter_by_score(&detections, cfg.score_cut),
            cfg.nms_iou,
            cfg.class_aware,
        );
        Ok(Frame {
            detections,
            ground_truth,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let loaded: Vec<Result<Frame>> = pool.install(|| manifest.items.par_iter().map(load).collect());
    let frames = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        class_names: manifest.class_names.clone(),
        num_images: frames.len(),
        sweep: evaluate_frames(&frames, &cfg.iou_thresholds, num_classes),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub resolutions: Vec<(usize, usize)>,
    pub iterations: usize,
    pub synthetic_boxes: usize,
    pub seed: u64,
    pub grid: GridShape,
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            resolutions: vec![(320, 320), (640, 640), (1280, 1280)],
            iterations: 50,
            synthetic_boxes: 32,
            seed: 0,
            grid: GridShape {
                s: 20,
                b: 2,
                num_classes: 2,
            },
            conf_threshold: 0.25,
            nms_iou: DEFAULT_NMS_IOU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub width: usize,
    pub height: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Detections kept on the last timed frame of each resolution.
    pub detections: Vec<Vec<Detection>>,
}

/// A grid with `n` confident boxes, each in its own cell and kept within
/// the middle 80% of that cell so no two boxes overlap. The grid grows
/// when it has fewer than `n` cells.
pub fn synthetic_grid(shape: GridShape, n: usize, seed: u64) -> Result<GridTensor> {
    let mut s = shape.s;
    while s * s < n {
        s += 1;
    }
    let shape = GridShape::new(s, shape.b, shape.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..s * s).collect();
    cells.shuffle(&mut rng);
    let mut t = GridTensor::zeros(shape);
    for &cell in &cells[..n] {
        let p = t.predictor_mut(cell / s, cell % s, 0);
        p[CH_X] = rng.gen_range(0.3..0.7);
        p[CH_Y] = rng.gen_range(0.3..0.7);
        p[CH_W] = rng.gen_range(0.1..0.4) / s as f64;
        p[CH_H] = rng.gen_range(0.1..0.4) / s as f64;
        p[CH_CONF] = rng.gen_range(0.6..1.0);
        let hot = rng.gen_range(0..shape.num_classes);
        for c in 0..shape.num_classes {
            p[BOX_CHANNELS + c] = if c == hot {
                rng.gen_range(0.5..1.0)
            } else {
                rng.gen_range(0.0..0.5)
            };
        }
    }
    Ok(t)
}

pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Result<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..width * height * 3)
        .map(|_| rng.gen::<u8>() as f64 / 255.0)
        .collect();
    ImageBuffer::new(width, height, 3, pixels)
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Times preprocess + decode + NMS per frame at each resolution, single
/// threaded, after a fixed number of warm-up frames.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.iterations < MIN_BENCH_ITERATIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_BENCH_ITERATIONS} iterations, got {}",
            cfg.iterations
        )));
    }
    let grid = synthetic_grid(cfg.grid, cfg.synthetic_boxes, cfg.seed)?;
    let mut report = BenchReport {
        rows: Vec::new(),
        detections: Vec::new(),
    };
    for &(width, height) in &cfg.resolutions {
        let img = synthetic_image(width, height, cfg.seed)?;
        let spec = PreprocessSpec {
            target_width: width,
            target_height: height,
            ..PreprocessSpec::default()
        };
        let frame = || -> Result<Vec<Detection>> {
            let input = preprocess(&img, &spec)?;
            std::hint::black_box(&input);
            Ok(nms(
                &decode_grid(&grid, cfg.conf_threshold),
                cfg.nms_iou,
                true,
            ))
        };
        for _ in 0..WARMUP_RUNS {
            std::hint::black_box(frame()?);
        }
        let mut times = Vec::with_capacity(cfg.iterations);
        let mut last = Vec::new();
        for _ in 0..cfg.iterations {
            let start = Instant::now();
            last = std::hint::black_box(frame()?);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
        times.sort_by(f64::total_cmp);
        report.rows.push(BenchRow {
            width,
            height,
            iterations: cfg.iterations,
            mean_ms,
            p50_ms: percentile(&times, 50.0),
            p95_ms: percentile(&times, 95.0),
            fps: if mean_ms > 0.0 {
                1e3 / mean_ms
            } else {
                f64::INFINITY
            },
        });
        report.detections.push(last);
    }
    Ok(report)
}
