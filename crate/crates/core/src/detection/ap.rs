//! Average precision with greedy matching and 11-point interpolation.
//!
//! Difficulty bins are cumulative: `moderate` evaluates easy and moderate
//! objects, `hard` evaluates all of them. Ground truths outside the bin are
//! ignored, and detections matching them count neither way.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::boxes::{DetectionLabelSet, Difficulty, ObjectBox};
use super::iou::{bev_iou, iou_3d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouMode {
    pub fn iou(self, a: &ObjectBox, b: &ObjectBox) -> f64 {
        match self {
            IouMode::Bev => bev_iou(a, b),
            IouMode::ThreeD => iou_3d(a, b),
        }
    }
}

/// AP per difficulty bin; bins without ground truth are absent.
pub type ApReport = BTreeMap<Difficulty, f64>;

/// `dets[i]` and `labels[i]` belong to the same scene.
pub fn average_precision(dets: &[Vec<ObjectBox>], labels: &[DetectionLabelSet], iou_threshold: f64, mode: IouMode) -> ApReport {
    let mut report = ApReport::new();
    for bin in Difficulty::ALL {
        if let Some(ap) = ap_for_bin(dets, labels, iou_threshold, mode, bin) {
            report.insert(bin, ap);
        }
    }
    report
}

fn ap_for_bin(dets: &[Vec<ObjectBox>], labels: &[DetectionLabelSet], thr: f64, mode: IouMode, bin: Difficulty) -> Option<f64> {
    let n_gt: usize = labels.iter().flat_map(|l| &l.boxes).filter(|b| b.difficulty <= bin).count();
    if n_gt == 0 {
        return None;
    }
    let mut all: Vec<(usize, usize)> = Vec::new();
    for (s, ds) in dets.iter().enumerate().take(labels.len()) {
        all.extend((0..ds.len()).map(|i| (s, i)));
    }
    all.sort_by(|a, b| dets[b.0][b.1].confidence.total_cmp(&dets[a.0][a.1].confidence));

    let mut taken: Vec<Vec<bool>> = labels.iter().map(|l| vec![false; l.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for (s, i) in all {
        let det = &dets[s][i];
        let mut best: Option<(usize, f64)> = None;
        for (k, gt) in labels[s].boxes.iter().enumerate() {
            if taken[s][k] {
                continue;
            }
            let iou = mode.iou(det, &gt.object);
            // Prefer in-bin ground truth; an ignored match only absorbs the detection.
            let key = (gt.difficulty <= bin, iou);
            if iou >= thr && best.is_none_or(|(b, v)| key > (labels[s].boxes[b].difficulty <= bin, v)) {
                best = Some((k, iou));
            }
        }
        match best {
            Some((k, _)) => {
                taken[s][k] = true;
                if labels[s].boxes[k].difficulty <= bin {
                    tp += 1;
                } else {
                    continue;
                }
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    Some(eleven_point(&curve))
}

/// Mean over recall levels `0, 0.1, ..., 1` of the best precision at or above each level.
pub fn eleven_point(curve: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    for k in 0..=10 {
        let r = k as f64 / 10.0;
        sum += curve.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|&(_, p)| p).fold(0.0, f64::max);
    }
    sum / 11.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::boxes::LabeledBox;

    fn bx(x: f64, conf: f64) -> ObjectBox {
        ObjectBox::new([x, 1.0, 10.0], [1.7, 1.5, 4.0], 0.0, conf).unwrap()
    }

    fn labels(xs: &[(f64, Difficulty)]) -> DetectionLabelSet {
        DetectionLabelSet::new(xs.iter().map(|&(x, d)| LabeledBox { object: bx(x, 1.0), difficulty: d }).collect()).unwrap()
    }

    #[test]
    fn perfect_detector() {
        let l = labels(&[(0.0, Difficulty::Easy), (5.0, Difficulty::Easy)]);
        let d = vec![vec![bx(0.0, 0.9), bx(5.0, 0.8)]];
        let ap = average_precision(&d, &[l], 0.7, IouMode::Bev);
        assert_eq!(ap[&Difficulty::Easy], 1.0);
        assert_eq!(ap[&Difficulty::Hard], 1.0);
    }

    #[test]
    fn no_detections() {
        let ap = average_precision(&[vec![]], &[labels(&[(0.0, Difficulty::Easy)])], 0.7, IouMode::ThreeD);
        assert_eq!(ap[&Difficulty::Easy], 0.0);
    }

    #[test]
    fn true_then_false_is_perfect() {
        let d = vec![vec![bx(0.0, 0.9), bx(8.0, 0.5)]];
        let ap = average_precision(&d, &[labels(&[(0.0, Difficulty::Easy)])], 0.7, IouMode::Bev);
        assert_eq!(ap[&Difficulty::Easy], 1.0);
    }

    #[test]
    fn false_then_true_halves_precision() {
        let d = vec![vec![bx(8.0, 0.9), bx(0.0, 0.5)]];
        let ap = average_precision(&d, &[labels(&[(0.0, Difficulty::Easy)])], 0.7, IouMode::Bev);
        assert!((ap[&Difficulty::Easy] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_labels_are_absent() {
        let ap = average_precision(&[vec![bx(0.0, 0.9)]], &[DetectionLabelSet::default()], 0.7, IouMode::Bev);
        assert!(ap.is_empty());
    }

    #[test]
    fn bins_are_cumulative_and_ignore_harder_objects() {
        let l = labels(&[(0.0, Difficulty::Easy), (6.0, Difficulty::Hard)]);
        let d = vec![vec![bx(6.0, 0.9), bx(0.0, 0.8)]];
        let ap = average_precision(&d, &[l], 0.7, IouMode::Bev);
        assert_eq!(ap[&Difficulty::Easy], 1.0);
        assert_eq!(ap[&Difficulty::Moderate], 1.0);
        assert_eq!(ap[&Difficulty::Hard], 1.0);
    }

    #[test]
    fn each_ground_truth_matches_once() {
        let d = vec![vec![bx(0.0, 0.9), bx(0.0, 0.8)]];
        let ap = average_precision(&d, &[labels(&[(0.0, Difficulty::Easy), (9.0, Difficulty::Easy)])], 0.7, IouMode::Bev);
        // Recall tops out at 0.5 with precision 1.
        assert!((ap[&Difficulty::Easy] - 6.0 / 11.0).abs() < 1e-12);
    }
}
