//! Region proposal head on the cost volume: per-anchor objectness logits and
//! center-size offsets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{Anchor, AnchorSpec, Assignment};
use super::nms::nms_rois;
use crate::diff::{Bound, ConvAttrs, Graph, NodeId, PadMode, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::nn;
use crate::occupancy::NORM_EPS;
use crate::roi::Roi3D;
use crate::scalar::Scalar;

pub const REG_PARAMS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rpn {
    pub in_channels: usize,
    pub channels: usize,
    pub stride: usize,
    pub anchors_per_cell: usize,
}

/// Logits `[A, Dg, Hg, Wg]` and offsets `[6A, Dg, Hg, Wg]` (channel `6a + k`).
#[derive(Clone, Copy, Debug)]
pub struct RpnOutput {
    pub cls: NodeId,
    pub reg: NodeId,
    pub grid: [usize; 3],
}

impl Rpn {
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        nn::insert_conv(store, rng, "rpn.trunk", self.channels, self.in_channels, self.stride, 3, 1.0)?;
        nn::insert_conv(store, rng, "rpn.mid", self.channels, self.channels, 3, 3, 1.0)?;
        nn::insert_conv(store, rng, "rpn.cls", self.anchors_per_cell, self.channels, 1, 3, 0.1)?;
        nn::insert_conv(store, rng, "rpn.reg", REG_PARAMS * self.anchors_per_cell, self.channels, 1, 3, 0.1)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, v: NodeId) -> Result<RpnOutput> {
        let shape = g.value(v).shape().to_vec();
        if shape.len() != 4 || shape[0] != self.in_channels {
            return Err(Error::shape("rpn", format!("expected [{}, D, H, W], got {shape:?}", self.in_channels)));
        }
        if shape[1..].iter().any(|&n| n % self.stride != 0) {
            return Err(Error::shape("rpn", format!("volume {:?} is not a multiple of stride {}", &shape[1..], self.stride)));
        }
        let grid = [shape[1] / self.stride, shape[2] / self.stride, shape[3] / self.stride];
        // Normalizing before each ReLU keeps every channel partly active.
        let mut x = g.conv3d(v, p.get("rpn.trunk.w")?, p.get("rpn.trunk.b")?, ConvAttrs::strided(self.stride))?;
        x = g.instance_norm(x, None, NORM_EPS)?;
        x = g.relu(x)?;
        x = g.conv3d(x, p.get("rpn.mid.w")?, p.get("rpn.mid.b")?, ConvAttrs::same(3, PadMode::Zero))?;
        x = g.instance_norm(x, None, NORM_EPS)?;
        x = g.relu(x)?;
        let one = ConvAttrs::same(1, PadMode::Zero);
        let cls = g.conv3d(x, p.get("rpn.cls.w")?, p.get("rpn.cls.b")?, one)?;
        let reg = g.conv3d(x, p.get("rpn.reg.w")?, p.get("rpn.reg.b")?, one)?;
        Ok(RpnOutput { cls, reg, grid })
    }
}

/// Targets and weights in the head's native layouts.
#[derive(Clone, Debug)]
pub struct RpnTargets<T> {
    pub cls_target: Tensor<T>,
    pub cls_weight: Tensor<T>,
    pub reg_target: Tensor<T>,
    pub reg_weight: Tensor<T>,
    pub positives: usize,
    pub negatives: usize,
}

/// Balanced classification weights (each class contributes half of the
/// term when present) and regression averaged over positive anchors.
pub fn rpn_targets<T: Scalar>(
    anchors: &[Anchor],
    spec: &AnchorSpec,
    grid: [usize; 3],
    assignment: &[Assignment],
    gts: &[Roi3D],
) -> Result<RpnTargets<T>> {
    let a_n = spec.per_cell();
    let cells = grid.iter().product::<usize>();
    if anchors.len() != cells * a_n || assignment.len() != anchors.len() {
        return Err(Error::shape("rpn targets", format!("{} anchors, {} assignments for {cells} cells x {a_n}", anchors.len(), assignment.len())));
    }
    let positives = assignment.iter().filter(|a| matches!(a, Assignment::Positive(_))).count();
    let negatives = assignment.iter().filter(|a| matches!(a, Assignment::Negative)).count();
    let classes = (positives > 0) as usize + (negatives > 0) as usize;
    let shape_c = [a_n, grid[0], grid[1], grid[2]];
    let shape_r = [REG_PARAMS * a_n, grid[0], grid[1], grid[2]];
    let mut t = RpnTargets {
        cls_target: Tensor::zeros(&shape_c),
        cls_weight: Tensor::zeros(&shape_c),
        reg_target: Tensor::zeros(&shape_r),
        reg_weight: Tensor::zeros(&shape_r),
        positives,
        negatives,
    };
    for (idx, (anchor, asg)) in anchors.iter().zip(assignment).enumerate() {
        let (cell, a) = (idx / a_n, idx % a_n);
        let ci = a * cells + cell;
        match *asg {
            Assignment::Positive(k) => {
                t.cls_target.data_mut()[ci] = T::one();
                t.cls_weight.data_mut()[ci] = T::of(1.0 / (classes * positives) as f64);
                let enc = anchor.encode(&gts[k]);
                for (j, e) in enc.iter().enumerate() {
                    let ri = (a * REG_PARAMS + j) * cells + cell;
                    t.reg_target.data_mut()[ri] = T::of(*e);
                    t.reg_weight.data_mut()[ri] = T::of(1.0 / positives as f64);
                }
            }
            Assignment::Negative => t.cls_weight.data_mut()[ci] = T::of(1.0 / (classes * negatives) as f64),
            Assignment::Ignore => {}
        }
    }
    Ok(t)
}

/// `L_class + L_anc` as graph nodes, returned as `(total, class, anc)`.
pub fn rpn_loss<T: Scalar>(g: &mut Graph<T>, out: &RpnOutput, t: &RpnTargets<T>) -> Result<(NodeId, NodeId, NodeId)> {
    let (ct, cw) = (g.constant(t.cls_target.clone()), g.constant(t.cls_weight.clone()));
    let class = g.bce_with_logits(out.cls, ct, Some(cw), 1.0)?;
    let (rt, rw) = (g.constant(t.reg_target.clone()), g.constant(t.reg_weight.clone()));
    let anc = g.smooth_l1(out.reg, rt, Some(rw), 1.0, 1.0)?;
    Ok((g.add(class, anc)?, class, anc))
}

/// Decodes every anchor, clips to the volume, and keeps the `keep` best
/// after axis-aligned NMS at `nms_iou`. Scores are sigmoid probabilities.
pub fn proposals<T: Scalar>(
    cls: &Tensor<T>,
    reg: &Tensor<T>,
    anchors: &[Anchor],
    dims: [usize; 3],
    pre_nms: usize,
    nms_iou: f64,
    keep: usize,
) -> Vec<(Roi3D, f64)> {
    let a_n = cls.shape()[0];
    let cells = cls.numel() / a_n.max(1);
    let mut cand: Vec<(usize, f64)> = (0..anchors.len())
        .map(|idx| {
            let (cell, a) = (idx / a_n, idx % a_n);
            (idx, sigmoid(cls.data()[a * cells + cell].as_f64()))
        })
        .collect();
    cand.sort_by(|x, y| y.1.total_cmp(&x.1));
    cand.truncate(pre_nms);
    let mut rois = Vec::new();
    let mut scores = Vec::new();
    for (idx, s) in cand {
        let (cell, a) = (idx / a_n, idx % a_n);
        let off: Vec<f64> = (0..REG_PARAMS).map(|j| reg.data()[(a * REG_PARAMS + j) * cells + cell].as_f64()).collect();
        if let Some(r) = anchors[idx].decode(&off).clip(dims) {
            rois.push(r);
            scores.push(s);
        }
    }
    nms_rois(&rois, &scores, nms_iou, keep).into_iter().map(|i| (rois[i], scores[i])).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::anchors::{assign_anchors, generate_anchors, NEG_IOU, POS_IOU};
    use crate::diff::ops::{bce_with_logits, smooth_l1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_anchor_setup() -> (Vec<Anchor>, AnchorSpec, Vec<Roi3D>) {
        let spec = AnchorSpec::fixed(8, vec![[6.0, 6.0, 3.0], [12.0, 10.0, 5.0]]);
        let anchors = generate_anchors([8, 8, 8], &spec).unwrap();
        let gt = Roi3D::from_center([4.0, 3.0, 3.5], [11.0, 10.0, 5.5]).unwrap();
        (anchors, spec, vec![gt])
    }

    #[test]
    fn hand_built_two_anchor_loss() {
        let (anchors, spec, gts) = two_anchor_setup();
        let asg = vec![Assignment::Negative, Assignment::Positive(0)];
        let t = rpn_targets::<f64>(&anchors, &spec, [1, 1, 1], &asg, &gts).unwrap();
        let logits = [0.3, -0.8];
        let offs: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.4).collect();
        let mut g = Graph::new();
        let cls = g.constant(Tensor::from_vec(&[2, 1, 1, 1], logits.to_vec()).unwrap());
        let reg = g.constant(Tensor::from_vec(&[12, 1, 1, 1], offs.clone()).unwrap());
        let (total, _, _) = rpn_loss(&mut g, &RpnOutput { cls, reg, grid: [1, 1, 1] }, &t).unwrap();
        let enc = anchors[1].encode(&gts[0]);
        let want_cls = 0.5 * bce_with_logits(0.3, 0.0) + 0.5 * bce_with_logits(-0.8, 1.0);
        let want_anc: f64 = (0..6).map(|k| smooth_l1(offs[6 + k] - enc[k], 1.0)).sum();
        assert!((g.value(total).data()[0] - (want_cls + want_anc)).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_vanishes() {
        let (anchors, spec, gts) = two_anchor_setup();
        let asg = vec![Assignment::Negative, Assignment::Positive(0)];
        let t = rpn_targets::<f64>(&anchors, &spec, [1, 1, 1], &asg, &gts).unwrap();
        let mut g = Graph::new();
        let cls = g.constant(Tensor::from_vec(&[2, 1, 1, 1], vec![-60.0, 60.0]).unwrap());
        let reg = g.constant(t.reg_target.clone());
        let (total, _, _) = rpn_loss(&mut g, &RpnOutput { cls, reg, grid: [1, 1, 1] }, &t).unwrap();
        assert!(g.value(total).data()[0] < 1e-20);
    }

    #[test]
    fn all_ignore_gives_zero_and_no_gradient() {
        let (anchors, spec, gts) = two_anchor_setup();
        let t = rpn_targets::<f64>(&anchors, &spec, [1, 1, 1], &[Assignment::Ignore; 2], &gts).unwrap();
        let mut g = Graph::new();
        let cls = g.variable(Tensor::from_vec(&[2, 1, 1, 1], vec![0.4, -1.0]).unwrap());
        let reg = g.variable(Tensor::full(&[12, 1, 1, 1], 0.3));
        let (total, _, _) = rpn_loss(&mut g, &RpnOutput { cls, reg, grid: [1, 1, 1] }, &t).unwrap();
        assert_eq!(g.value(total).data()[0], 0.0);
        g.backward(total).unwrap();
        assert!(g.grad(cls).unwrap().data().iter().chain(g.grad(reg).unwrap().data()).all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shapes_and_proposals() {
        let spec = AnchorSpec::fixed(8, vec![[12.0, 10.0, 4.0], [20.0, 16.0, 6.0]]);
        let rpn = Rpn { in_channels: 2, channels: 4, stride: 8, anchors_per_cell: 2 };
        let mut store = ParamStore::<f64>::default();
        rpn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let v = g.constant(Tensor::from_fn(&[2, 16, 16, 24], |i| (i as f64 * 0.01).sin()));
        let out = rpn.forward(&mut g, &p, v).unwrap();
        assert_eq!(g.value(out.cls).shape(), &[2, 2, 2, 3]);
        assert_eq!(g.value(out.reg).shape(), &[12, 2, 2, 3]);
        let anchors = generate_anchors([16, 16, 24], &spec).unwrap();
        let props = proposals(g.value(out.cls), g.value(out.reg), &anchors, [16, 16, 24], 100, 0.7, 5);
        assert!(!props.is_empty() && props.len() <= 5);
        assert!(props.windows(2).all(|w| w[0].1 >= w[1].1));
        let bad = g.constant(Tensor::zeros(&[2, 12, 16, 24]));
        assert!(rpn.forward(&mut g, &p, bad).is_err());
        let gts = [Roi3D::from_center([10.0, 8.0, 7.0], [14.0, 11.0, 4.0]).unwrap()];
        let asg = assign_anchors(&anchors, &gts, POS_IOU, NEG_IOU);
        let t = rpn_targets::<f64>(&anchors, &spec, out.grid, &asg, &gts).unwrap();
        assert!(t.positives >= 1);
    }
}
