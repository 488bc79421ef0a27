//! Detection on the cost volume: anchors, proposal and header networks,
//! box overlap, suppression and average precision.

pub mod anchors;
pub mod ap;
pub mod boxes;
pub mod header;
pub mod iou;
pub mod nms;
pub mod rpn;

pub use anchors::{assign_anchors, generate_anchors, vehicle_extents, Anchor, AnchorSpec, Assignment, VehicleAnchors};
pub use ap::{average_precision, ApReport, IouMode};
pub use boxes::{normalize_yaw, DetectionLabelSet, Difficulty, LabeledBox, ObjectBox};
pub use header::{decode_header, header_loss, header_target, Header, SizePrior};
pub use iou::{bev_iou, iou_3d};
pub use nms::nms;
pub use rpn::{proposals, rpn_loss, rpn_targets, Rpn, RpnOutput, RpnTargets};

use crate::diff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const HEADER_WEIGHT: f64 = 2.0;

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss component {name} is {v}")))
    }
}

/// `l_disp + l_rpn + 2 l_header`.
pub fn total_loss_value(l_disp: f64, l_rpn: f64, l_header: f64) -> Result<f64> {
    check_finite("L_disp", l_disp)?;
    check_finite("L_rpn", l_rpn)?;
    check_finite("L_header", l_header)?;
    Ok(l_disp + l_rpn + HEADER_WEIGHT * l_header)
}

/// Graph form of [`total_loss_value`]; absent terms count as zero.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, l_disp: NodeId, l_rpn: Option<NodeId>, l_header: Option<NodeId>) -> Result<NodeId> {
    let scalar = |g: &Graph<T>, id: Option<NodeId>| id.map_or(0.0, |id| g.value(id).data()[0].as_f64());
    total_loss_value(scalar(g, Some(l_disp)), scalar(g, l_rpn), scalar(g, l_header))?;
    let mut total = l_disp;
    if let Some(r) = l_rpn {
        total = g.add(total, r)?;
    }
    if let Some(h) = l_header {
        let h2 = g.scale(h, HEADER_WEIGHT)?;
        total = g.add(total, h2)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    #[test]
    fn weights_one_one_two() {
        assert_eq!(total_loss_value(1.0, 1.0, 1.0).unwrap(), 4.0);
        assert_eq!(total_loss_value(0.37, 0.0, 0.0).unwrap(), 0.37);
        let mut g = Graph::<f64>::new();
        let ids: Vec<NodeId> = [1.0, 1.0, 1.0].iter().map(|&v| g.variable(Tensor::scalar(v))).collect();
        let t = total_loss(&mut g, ids[0], Some(ids[1]), Some(ids[2])).unwrap();
        assert_eq!(g.value(t).data()[0], 4.0);
        g.backward(t).unwrap();
        let grads: Vec<f64> = ids.iter().map(|&i| g.grad(i).unwrap().data()[0]).collect();
        assert_eq!(grads, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn non_finite_component_is_named() {
        let err = total_loss_value(1.0, f64::NAN, 0.0).unwrap_err();
        assert!(err.to_string().contains("L_rpn"), "{err}");
    }
}
