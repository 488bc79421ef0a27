//! Dense anchor grid in `(u, v, d)` volume coordinates and anchor assignment.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::boxes::ObjectBox;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::roi::Roi3D;

pub const POS_IOU: f64 = 0.5;
pub const NEG_IOU: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub center: [f64; 3],
    pub extent: [f64; 3],
}

impl Anchor {
    pub fn roi(&self) -> Roi3D {
        Roi3D {
            p_min: std::array::from_fn(|a| self.center[a] - 0.5 * self.extent[a]),
            p_max: std::array::from_fn(|a| self.center[a] + 0.5 * self.extent[a]),
        }
    }

    /// Center-size offsets of `gt` relative to this anchor:
    /// `(c - c_a) / e_a` per axis, then `ln(e / e_a)` per axis.
    pub fn encode(&self, gt: &Roi3D) -> [f64; 6] {
        let (c, e) = (gt.center(), gt.extent());
        std::array::from_fn(|k| {
            if k < 3 {
                (c[k] - self.center[k]) / self.extent[k]
            } else {
                (e[k - 3] / self.extent[k - 3]).ln()
            }
        })
    }

    pub fn decode(&self, off: &[f64]) -> Roi3D {
        let c: [f64; 3] = std::array::from_fn(|a| self.center[a] + off[a] * self.extent[a]);
        let e: [f64; 3] = std::array::from_fn(|a| self.extent[a] * off[a + 3].clamp(-8.0, 8.0).exp());
        Roi3D { p_min: std::array::from_fn(|a| c[a] - 0.5 * e[a]), p_max: std::array::from_fn(|a| c[a] + 0.5 * e[a]) }
    }
}

/// Anchor layout: one isotropic stride, a list of fixed `(du, dv, dd)`
/// extents and optional depth-sized vehicle anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub stride: usize,
    pub extents: Vec<[f64; 3]>,
    pub vehicle: Option<VehicleAnchors>,
}

/// `per_cell` anchors spread evenly along `d` inside each cell, each with the
/// volume extent of a mean vehicle at the depth of its own disparity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleAnchors {
    pub camera: Camera,
    pub size: [f64; 3],
    pub per_cell: usize,
}

/// Disparities below this are sized as if at this disparity.
const MIN_ANCHOR_DISPARITY: f64 = 0.5;

impl AnchorSpec {
    pub fn fixed(stride: usize, extents: Vec<[f64; 3]>) -> Self {
        AnchorSpec { stride, extents, vehicle: None }
    }

    pub fn per_cell(&self) -> usize {
        self.extents.len() + self.vehicle.map_or(0, |v| v.per_cell)
    }

    /// Cells per axis `[D, H, W] / stride`.
    pub fn grid(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        if self.stride == 0 || dims.iter().any(|&n| n == 0 || n % self.stride != 0) {
            return Err(Error::Invalid(format!("stride {} does not divide volume {:?}", self.stride, dims)));
        }
        Ok(dims.map(|n| n / self.stride))
    }
}

/// Volume-space hulls of an upright vehicle of `size` facing away from the
/// camera, placed on the optical axis at each depth.
pub fn vehicle_extents(cam: &Camera, size: [f64; 3], depths: &[f64]) -> Result<Vec<[f64; 3]>> {
    depths
        .iter()
        .map(|&z| Ok(ObjectBox::new([0.0, 0.0, z], size, -FRAC_PI_2, 1.0)?.roi(cam)?.extent()))
        .collect()
}

/// Anchors ordered by `d`, then `v`, then `u`, then per-cell index (fixed
/// extents first, then vehicle anchors by increasing `d`). Cell `i` along an
/// axis is centered at `stride (i + 0.5) - 0.5`.
pub fn generate_anchors(dims: [usize; 3], spec: &AnchorSpec) -> Result<Vec<Anchor>> {
    if spec.per_cell() == 0 {
        return Err(Error::Invalid("anchor extents list is empty".into()));
    }
    if spec.extents.iter().flatten().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Invalid("anchor extents must be positive".into()));
    }
    let [gd, gh, gw] = spec.grid(dims)?;
    let s = spec.stride as f64;
    let at = |i: usize| s * (i as f64 + 0.5) - 0.5;
    // Vehicle anchors per d-cell: (d center, extent).
    let mut sized: Vec<Vec<(f64, [f64; 3])>> = Vec::with_capacity(gd);
    for k in 0..gd {
        let mut row = Vec::new();
        if let Some(v) = &spec.vehicle {
            for t in 0..v.per_cell {
                let d = s * k as f64 + (t as f64 + 0.5) * s / v.per_cell as f64 - 0.5;
                let z = v.camera.fb() / d.max(MIN_ANCHOR_DISPARITY);
                row.push((d, vehicle_extents(&v.camera, v.size, &[z])?[0]));
            }
        }
        sized.push(row);
    }
    let mut out = Vec::with_capacity(gd * gh * gw * spec.per_cell());
    for (k, row) in sized.iter().enumerate() {
        for j in 0..gh {
            for i in 0..gw {
                for e in &spec.extents {
                    out.push(Anchor { center: [at(i), at(j), at(k)], extent: *e });
                }
                for &(d, e) in row {
                    out.push(Anchor { center: [at(i), at(j), d], extent: e });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Positive(usize),
    Negative,
    Ignore,
}

/// Labels anchors by their best axis-aligned IoU with any ground-truth RoI.
/// A ground truth that reaches `pos_iou` with no anchor takes its best
/// overlapping anchor anyway.
pub fn assign_anchors(anchors: &[Anchor], gts: &[Roi3D], pos_iou: f64, neg_iou: f64) -> Vec<Assignment> {
    let rois: Vec<Roi3D> = anchors.iter().map(Anchor::roi).collect();
    let mut best_gt = vec![(0usize, 0.0f64); anchors.len()];
    let mut best_anchor = vec![(usize::MAX, 0.0f64); gts.len()];
    for (a, r) in rois.iter().enumerate() {
        for (k, gt) in gts.iter().enumerate() {
            let iou = r.iou(gt);
            if iou > best_gt[a].1 {
                best_gt[a] = (k, iou);
            }
            if iou > best_anchor[k].1 {
                best_anchor[k] = (a, iou);
            }
        }
    }
    let mut out: Vec<Assignment> = best_gt
        .iter()
        .map(|&(k, iou)| {
            if iou >= pos_iou {
                Assignment::Positive(k)
            } else if iou < neg_iou {
                Assignment::Negative
            } else {
                Assignment::Ignore
            }
        })
        .collect();
    for (k, &(a, iou)) in best_anchor.iter().enumerate() {
        if a != usize::MAX && iou < pos_iou {
            out[a] = Assignment::Positive(k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(n: usize) -> AnchorSpec {
        AnchorSpec::fixed(8, vec![[24.0, 16.0, 4.0]; n])
    }

    #[test]
    fn grid_counts() {
        assert_eq!(generate_anchors([48, 64, 64], &spec(1)).unwrap().len(), 384);
        assert_eq!(generate_anchors([48, 64, 64], &spec(2)).unwrap().len(), 768);
        assert!(generate_anchors([48, 64, 64], &spec(0)).is_err());
        assert!(generate_anchors([48, 60, 64], &spec(1)).is_err());
    }

    #[test]
    fn centers_inside_and_ordered() {
        let a = generate_anchors([16, 16, 24], &spec(2)).unwrap();
        assert!(a.iter().all(|x| x.center[0] < 24.0 && x.center[1] < 16.0 && x.center[2] < 16.0 && x.center.iter().all(|&c| c > 0.0)));
        assert_eq!(a[0].center, a[1].center);
        assert_eq!(a[2].center, [11.5, 3.5, 3.5]);
        assert_eq!(a[6].center, [3.5, 11.5, 3.5]);
    }

    #[test]
    fn zero_offsets_decode_to_anchor() {
        let a = Anchor { center: [10.0, 5.0, 3.0], extent: [8.0, 6.0, 2.0] };
        assert_eq!(a.decode(&[0.0; 6]), a.roi());
    }

    #[test]
    fn assignment_examples() {
        let a = Anchor { center: [0.5, 0.5, 0.5], extent: [1.0; 3] };
        let same = a.roi();
        let far = Roi3D::new([5.0; 3], [6.0; 3]).unwrap();
        let half = Roi3D::new([0.5, 0.0, 0.0], [1.5, 1.0, 1.0]).unwrap();
        assert_eq!(assign_anchors(&[a], &[same], POS_IOU, NEG_IOU), vec![Assignment::Positive(0)]);
        let lone = [a, Anchor { center: [20.5, 0.5, 0.5], extent: [1.0; 3] }];
        assert_eq!(assign_anchors(&lone, &[far], POS_IOU, NEG_IOU), vec![Assignment::Negative; 2]);
        // IoU 1/3 falls under the negative threshold once a better anchor
        // takes the match; 0.4 lands in the ignore band.
        assert!((a.roi().iou(&half) - 1.0 / 3.0).abs() < 1e-12);
        let two = [a, Anchor { center: [1.0, 0.5, 0.5], extent: [1.0; 3] }];
        assert_eq!(assign_anchors(&two, &[half], POS_IOU, NEG_IOU), vec![Assignment::Negative, Assignment::Positive(0)]);
        let band = Roi3D::new([0.0, 0.0, 0.0], [1.0, 1.0, 0.4]).unwrap();
        let three = [a, Anchor { center: [0.5, 0.5, 0.2], extent: [1.0, 1.0, 0.4] }];
        assert_eq!(assign_anchors(&three, &[band], POS_IOU, NEG_IOU), vec![Assignment::Ignore, Assignment::Positive(0)]);
    }

    #[test]
    fn unmatched_gt_is_forced() {
        let a = [Anchor { center: [0.5, 0.5, 0.5], extent: [1.0; 3] }];
        let half = Roi3D::new([0.5, 0.0, 0.0], [1.5, 1.0, 1.0]).unwrap();
        assert_eq!(assign_anchors(&a, &[half], POS_IOU, NEG_IOU), vec![Assignment::Positive(0)]);
    }

    #[test]
    fn extents_shrink_with_depth() {
        let cam = Camera::centered(200.0, 0.5, 256, 128).unwrap();
        let e = vehicle_extents(&cam, [1.7, 1.5, 4.0], &[7.0, 14.0]).unwrap();
        assert!(e[0].iter().zip(&e[1]).all(|(a, b)| a > b));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(c in prop::array::uniform3(-20.0..20.0f64), e in prop::array::uniform3(0.5..30.0f64),
                                 ac in prop::array::uniform3(-20.0..20.0f64), ae in prop::array::uniform3(0.5..30.0f64)) {
            let gt = Roi3D::from_center(c, e).unwrap();
            let a = Anchor { center: ac, extent: ae };
            let back = a.decode(&a.encode(&gt));
            for k in 0..3 {
                prop_assert!((back.p_min[k] - gt.p_min[k]).abs() < 1e-6);
                prop_assert!((back.p_max[k] - gt.p_max[k]).abs() < 1e-6);
            }
        }
    }
}
