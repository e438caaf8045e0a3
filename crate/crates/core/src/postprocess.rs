//! Confidence scoring, score filtering and greedy non-maximum suppression.

use std::cmp::Ordering;

use crate::geometry::{iou, Detection};

/// Default IoU threshold for suppression.
pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Objectness weighted by localization quality: `P(object) * IoU`.
pub fn confidence_score(p_object: f64, iou: f64) -> f64 {
    p_object * iou
}

/// Keeps detections whose confidence is strictly above `score_threshold`,
/// preserving order.
pub fn filter_by_score(dets: &[Detection], score_threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence > score_threshold)
        .copied()
        .collect()
}

/// Indices of `dets` ordered by descending confidence, ties by index.
pub(crate) fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy NMS returning the indices of kept detections in emission order.
///
/// A detection is suppressed when its IoU with an already kept detection is
/// strictly greater than `iou_threshold`. With `class_aware`, only
/// detections sharing a class suppress each other.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<usize> {
    let order = confidence_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if suppressed[j] || (class_aware && dets[j].class_id != dets[i].class_id) {
                continue;
            }
            if iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn nms(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<Detection> {
    nms_indices(dets, iou_threshold, class_aware)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}
