//! Detection matching and evaluation metrics.
//!
//! Matching is greedy in descending confidence order (ties by index): each
//! detection claims the unmatched same-class ground truth with the highest
//! IoU at or above the threshold. AP uses all-points interpolation of the
//! precision envelope, and mAP averages AP over classes that have at least
//! one ground truth.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection, GroundTruthBox};
use crate::postprocess::confidence_order;

/// IoU sweep used by default for evaluation reports.
pub const DEFAULT_IOU_THRESHOLDS: [f64; 5] = [0.50, 0.55, 0.60, 0.65, 0.70];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same matrix seen with the other class as positive.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// `TP / (TP + FP)`, or 0 when nothing was predicted.
pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

/// `TP / (TP + FN)`, or 0 when there is nothing to find.
pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

/// Harmonic mean of precision and recall, or 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::UndefinedMetric("accuracy"));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Outcome of matching one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub counts: ConfusionCounts,
    /// Per detection, in input order: whether it is a true positive.
    pub is_tp: Vec<bool>,
    /// Per detection, in input order: the ground truth it claimed.
    pub matched_gt: Vec<Option<usize>>,
}

pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_threshold: f64,
) -> MatchResult {
    let mut gt_taken = vec![false; gts.len()];
    let mut matched_gt = vec![None; dets.len()];
    for i in confidence_order(dets) {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] || gt.class_id != d.class_id {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_taken[g] = true;
            matched_gt[i] = Some(g);
        }
    }
    let tp = matched_gt.iter().filter(|m| m.is_some()).count() as u64;
    MatchResult {
        counts: ConfusionCounts {
            tp,
            fp: dets.len() as u64 - tp,
            fn_: gts.len() as u64 - tp,
            tn: 0,
        },
        is_tp: matched_gt.iter().map(Option::is_some).collect(),
        matched_gt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweeps the confidence cut over every distinct score, high to low.
///
/// `scored` holds `(confidence, is_true_positive)` pairs in any order.
pub fn pr_curve(scored: &[(f64, bool)], num_gt: usize) -> Vec<PrPoint> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &(conf, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_at_score = sorted.get(i + 1).is_none_or(|next| next.0 != conf);
        if last_at_score {
            points.push(PrPoint {
                threshold: conf,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, num_gt as u64),
            });
        }
    }
    points
}

/// All-points interpolated AP: the area under the monotone precision
/// envelope `p(r) = max { p_i : r_i >= r }`.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    // Walk backwards so the running max is the envelope at each recall step.
    for (i, pt) in curve.iter().enumerate().rev() {
        envelope = envelope.max(pt.precision);
        let prev_recall = if i == 0 { 0.0 } else { curve[i - 1].recall };
        ap += (pt.recall - prev_recall).max(0.0) * envelope;
    }
    ap.clamp(0.0, 1.0)
}

/// One image's detections and ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iou_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub iou_threshold: f64,
    pub class_id: usize,
    pub num_gt: usize,
    /// `None` for classes without ground truth, which are left out of mAP.
    pub ap: Option<f64>,
}

/// Full result of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub rows: Vec<MetricsRow>,
    pub class_ap: Vec<ClassAp>,
    pub counts: Vec<ConfusionCounts>,
    /// Class-pooled PR curve at the first threshold.
    pub pr_curve: Vec<PrPoint>,
}

/// Matches every frame at each threshold and aggregates.
pub fn evaluate_frames(frames: &[Frame], thresholds: &[f64], num_classes: usize) -> ThresholdSweep {
    let mut sweep = ThresholdSweep {
        rows: Vec::with_capacity(thresholds.len()),
        class_ap: Vec::new(),
        counts: Vec::new(),
        pr_curve: Vec::new(),
    };
    let num_gt_total: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    for (ti, &thr) in thresholds.iter().enumerate() {
        let mut counts = ConfusionCounts::default();
        let mut per_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); num_classes];
        let mut gt_per_class = vec![0usize; num_classes];
        let mut pooled = Vec::new();
        for frame in frames {
            let m = match_detections(&frame.detections, &frame.ground_truth, thr);
            counts += m.counts;
            for (d, &hit) in frame.detections.iter().zip(&m.is_tp) {
                if let Some(bucket) = per_class.get_mut(d.class_id) {
                    bucket.push((d.confidence, hit));
                }
                pooled.push((d.confidence, hit));
            }
            for gt in &frame.ground_truth {
                if let Some(n) = gt_per_class.get_mut(gt.class_id) {
                    *n += 1;
                }
            }
        }
        let mut ap_sum = 0.0;
        let mut ap_n = 0usize;
        for c in 0..num_classes {
            let ap = (gt_per_class[c] > 0)
                .then(|| average_precision(&pr_curve(&per_class[c], gt_per_class[c])));
            if let Some(v) = ap {
                ap_sum += v;
                ap_n += 1;
            }
            sweep.class_ap.push(ClassAp {
                iou_threshold: thr,
                class_id: c,
                num_gt: gt_per_class[c],
                ap,
            });
        }
        if ti == 0 {
            sweep.pr_curve = pr_curve(&pooled, num_gt_total);
        }
        let p = precision(&counts);
        let r = recall(&counts);
        sweep.rows.push(MetricsRow {
            iou_threshold: thr,
            precision: p,
            recall: r,
            f1: f1(p, r),
            map_value: if ap_n == 0 { 0.0 } else { ap_sum / ap_n as f64 },
        });
        sweep.counts.push(counts);
    }
    sweep
}

/// Single-image form of [`evaluate_frames`], returning only the rows.
pub fn map_over_thresholds(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    thresholds: &[f64],
    num_classes: usize,
) -> Vec<MetricsRow> {
    let frame = Frame {
        detections: dets.to_vec(),
        ground_truth: gts.to_vec(),
    };
    evaluate_frames(std::slice::from_ref(&frame), thresholds, num_classes).rows
}

/// Image-level binary label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryLabel {
    Weapon,
    NoWeapon,
}

impl BinaryLabel {
    pub fn name(&self) -> &'static str {
        match self {
            BinaryLabel::Weapon => "Weapon",
            BinaryLabel::NoWeapon => "No Weapon",
        }
    }

    pub fn other(&self) -> Self {
        match self {
            BinaryLabel::Weapon => BinaryLabel::NoWeapon,
            BinaryLabel::NoWeapon => BinaryLabel::Weapon,
        }
    }
}

/// Tallies `(predicted, actual)` pairs into a 2x2 matrix relative to the
/// chosen positive class.
pub fn binary_image_confusion(
    labels: &[(BinaryLabel, BinaryLabel)],
    positive: BinaryLabel,
) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for &(pred, actual) in labels {
        match (pred == positive, actual == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Accuracy, precision, recall and F1 of a confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarySummary {
    pub accuracy: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn summarize(c: &ConfusionCounts) -> BinarySummary {
    let p = precision(c);
    let r = recall(c);
    BinarySummary {
        accuracy: accuracy(c).ok(),
        precision: p,
        recall: r,
        f1: f1(p, r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use proptest::prelude::*;

    fn gt(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> GroundTruthBox {
        GroundTruthBox {
            class_id,
            bbox: BoundingBox { cx, cy, w, h },
        }
    }

    fn det_of(g: &GroundTruthBox, confidence: f64) -> Detection {
        Detection {
            class_id: g.class_id,
            bbox: g.bbox,
            confidence,
        }
    }

    #[test]
    fn ratios_with_conventions() {
        let c = ConfusionCounts::new(362, 128, 0, 510);
        assert!((precision(&c) - 0.739).abs() < 5e-4);
        assert_eq!(recall(&c), 1.0);
        assert_eq!(precision(&ConfusionCounts::default()), 0.0);
        assert_eq!(recall(&ConfusionCounts::default()), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert_eq!((f1(0.85, 0.80) * 100.0).round() / 100.0, 0.82);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&ConfusionCounts::new(5, 0, 0, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionCounts::new(1, 1, 1, 1)).unwrap(), 0.5);
        assert!(accuracy(&ConfusionCounts::default()).is_err());
        // (362 + 510) / 1000
        assert_eq!(
            accuracy(&ConfusionCounts::new(362, 128, 0, 510)).unwrap(),
            0.872
        );
    }

    #[test]
    fn perfect_and_empty_matching() {
        let gts = vec![gt(0, 0.3, 0.3, 0.2, 0.2), gt(1, 0.7, 0.7, 0.2, 0.2)];
        let dets: Vec<_> = gts.iter().map(|g| det_of(g, 1.0)).collect();
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.counts, ConfusionCounts::new(2, 0, 0, 0));
        let m = match_detections(&[], &gts, 0.5);
        assert_eq!(m.counts, ConfusionCounts::new(0, 0, 2, 0));
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let g = gt(0, 0.5, 0.5, 0.4, 0.4);
        let dets = [
            det_of(&g, 0.6),
            Detection {
                confidence: 0.9,
                bbox: BoundingBox { cx: 0.52, ..g.bbox },
                class_id: 0,
            },
        ];
        let m = match_detections(&dets, &[g], 0.5);
        assert_eq!(m.counts, ConfusionCounts::new(1, 1, 0, 0));
        // The higher-confidence detection claims the ground truth.
        assert_eq!(m.is_tp, vec![false, true]);
    }

    #[test]
    fn class_mismatch_never_matches() {
        let g = gt(0, 0.5, 0.5, 0.4, 0.4);
        let d = Detection {
            class_id: 1,
            bbox: g.bbox,
            confidence: 1.0,
        };
        assert_eq!(
            match_detections(&[d], &[g], 0.5).counts,
            ConfusionCounts::new(0, 1, 1, 0)
        );
    }

    #[test]
    fn pr_curve_cases() {
        assert!(pr_curve(&[], 3).is_empty());
        assert_eq!(
            pr_curve(&[(0.9, true)], 1),
            vec![PrPoint {
                threshold: 0.9,
                precision: 1.0,
                recall: 1.0
            }]
        );
        assert!(pr_curve(&[(0.9, false), (0.4, false)], 2)
            .iter()
            .all(|p| p.precision == 0.0));
        // Equal scores collapse into one point.
        let c = pr_curve(&[(0.5, true), (0.5, false), (0.2, true)], 2);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].precision, c[0].recall), (0.5, 0.5));
    }

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&[]), 0.0);
        assert_eq!(
            average_precision(&[PrPoint {
                threshold: 1.0,
                precision: 1.0,
                recall: 1.0
            }]),
            1.0
        );
        assert_eq!(
            average_precision(&pr_curve(&[(0.9, false), (0.3, false)], 4)),
            0.0
        );
        // TP, FP, TP over 2 gts: envelope 1.0 on [0, .5], 2/3 on (.5, 1].
        let ap = average_precision(&pr_curve(&[(0.9, true), (0.8, false), (0.7, true)], 2));
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn ap_against_dense_grid() {
        let curve = [
            PrPoint {
                threshold: 0.9,
                precision: 1.0,
                recall: 0.2,
            },
            PrPoint {
                threshold: 0.6,
                precision: 0.5,
                recall: 0.4,
            },
            PrPoint {
                threshold: 0.3,
                precision: 0.6,
                recall: 0.6,
            },
        ];
        let hand = 0.2 * 1.0 + 0.2 * 0.6 + 0.2 * 0.6;
        let n = 1_000_000;
        let dense: f64 = (0..n)
            .map(|k| {
                let r = (k as f64 + 0.5) / n as f64;
                curve
                    .iter()
                    .filter(|p| p.recall >= r)
                    .map(|p| p.precision)
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / n as f64;
        let ap = average_precision(&curve);
        assert!((ap - hand).abs() < 1e-12);
        assert!((ap - dense).abs() < 1e-9);
    }

    #[test]
    fn perfect_map_rows() {
        let gts = vec![gt(0, 0.3, 0.3, 0.2, 0.2), gt(1, 0.7, 0.7, 0.2, 0.2)];
        let dets: Vec<_> = gts.iter().map(|g| det_of(g, 1.0)).collect();
        for row in map_over_thresholds(&dets, &gts, &[0.5, 0.7], 2) {
            assert_eq!(
                (row.precision, row.recall, row.f1, row.map_value),
                (1.0, 1.0, 1.0, 1.0)
            );
        }
    }

    #[test]
    fn single_class_map_equals_ap() {
        let gts = vec![gt(0, 0.3, 0.3, 0.2, 0.2), gt(0, 0.7, 0.7, 0.2, 0.2)];
        let dets = vec![
            det_of(&gts[0], 0.9),
            Detection {
                class_id: 0,
                bbox: BoundingBox {
                    cx: 0.1,
                    cy: 0.9,
                    w: 0.1,
                    h: 0.1,
                },
                confidence: 0.8,
            },
            det_of(&gts[1], 0.4),
        ];
        let row = map_over_thresholds(&dets, &gts, &[0.5], 1)[0];
        let m = match_detections(&dets, &gts, 0.5);
        let scored: Vec<_> = dets
            .iter()
            .zip(&m.is_tp)
            .map(|(d, &t)| (d.confidence, t))
            .collect();
        assert_eq!(row.map_value, average_precision(&pr_curve(&scored, 2)));
    }

    #[test]
    fn classes_without_gt_are_excluded() {
        let gts = vec![gt(0, 0.3, 0.3, 0.2, 0.2)];
        let dets = vec![det_of(&gts[0], 0.9)];
        let sweep = evaluate_frames(
            &[Frame {
                detections: dets,
                ground_truth: gts,
            }],
            &[0.5],
            3,
        );
        assert_eq!(sweep.rows[0].map_value, 1.0);
        assert_eq!(sweep.class_ap[1].ap, None);
    }

    #[test]
    fn binary_confusion() {
        use BinaryLabel::*;
        let mut labels = Vec::new();
        labels.extend(std::iter::repeat_n((NoWeapon, NoWeapon), 362));
        labels.extend(std::iter::repeat_n((Weapon, Weapon), 510));
        labels.extend(std::iter::repeat_n((NoWeapon, Weapon), 128));
        let c = binary_image_confusion(&labels, NoWeapon);
        assert_eq!(c, ConfusionCounts::new(362, 128, 0, 510));
        assert_eq!(binary_image_confusion(&labels, Weapon), c.swapped());
    }

    proptest! {
        #[test]
        fn f1_bounds(p in 0.0..=1.0f64, r in 0.0..=1.0f64) {
            let f = f1(p, r);
            prop_assert!((0.0..=1.0).contains(&f));
            if p > 0.0 && r > 0.0 {
                prop_assert!(f <= p.max(r) + 1e-15 && f >= p.min(r) - 1e-15);
            }
            prop_assert!((f1(p, p) - p).abs() < 1e-15);
        }

        #[test]
        fn pr_recall_monotone(scored in proptest::collection::vec((0.0..1.0f64, any::<bool>()), 0..20)) {
            let num_gt = scored.iter().filter(|s| s.1).count() + 1;
            let curve = pr_curve(&scored, num_gt);
            for w in curve.windows(2) {
                prop_assert!(w[1].recall >= w[0].recall);
                prop_assert!(w[1].threshold < w[0].threshold);
            }
            let ap = average_precision(&curve);
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}
