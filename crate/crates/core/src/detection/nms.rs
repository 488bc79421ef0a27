//! Greedy non-maximum suppression.

use super::boxes::ObjectBox;
use super::iou::bev_iou;
use crate::roi::Roi3D;

/// Keeps boxes by descending confidence, dropping any whose BEV IoU with a
/// kept box exceeds `threshold`. Equal confidences keep input order.
pub fn nms(boxes: &[ObjectBox], threshold: f64) -> Vec<ObjectBox> {
    let scores: Vec<f64> = boxes.iter().map(|b| b.confidence).collect();
    greedy(&scores, threshold, |i, j| bev_iou(&boxes[i], &boxes[j])).into_iter().map(|i| boxes[i]).collect()
}

/// Same rule on axis-aligned volume RoIs; returns kept indices.
pub fn nms_rois(rois: &[Roi3D], scores: &[f64], threshold: f64, keep: usize) -> Vec<usize> {
    let mut kept = greedy(scores, threshold, |i, j| rois[i].iou(&rois[j]));
    kept.truncate(keep);
    kept
}

fn greedy(scores: &[f64], threshold: f64, iou: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(k, i) <= threshold) {
            kept.push(i);
        }
    }
    kept
}
