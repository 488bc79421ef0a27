//! Second-stage head: center, size, heading and confidence from a fused RoI.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boxes::ObjectBox;
use super::rpn::sigmoid;
use crate::camera::Camera;
use crate::diff::{Bound, ConvAttrs, Graph, NodeId, PadMode, ParamStore, Tensor};
use crate::disparity::MIN_DISPARITY;
use crate::error::{Error, Result};
use crate::nn;
use crate::occupancy::NORM_EPS;
use crate::roi::Roi3D;
use crate::scalar::Scalar;

/// Center offsets (3), log sizes (3), sin, cos, confidence logit.
pub const HEADER_OUTPUTS: usize = 9;
const REGRESSION: usize = 8;
const POOL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub in_channels: usize,
    pub channels: usize,
    pub grid: usize,
}

impl Header {
    fn pooled(&self) -> usize {
        (self.grid / POOL).pow(3)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        if !self.grid.is_multiple_of(POOL) {
            return Err(Error::Invalid(format!("header grid {} is not a multiple of {POOL}", self.grid)));
        }
        nn::insert_conv(store, rng, "head.conv", self.channels, self.in_channels, 3, 3, 1.0)?;
        nn::insert_conv(store, rng, "head.pool", self.channels, self.channels, POOL, 3, 1.0)?;
        nn::insert_linear(store, rng, "head.fc", HEADER_OUTPUTS, self.channels * self.pooled(), 0.1)
    }

    /// Fused RoI `[C+1, S, S, S]` to the raw `[9]` output vector.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, fused: NodeId) -> Result<NodeId> {
        let s = self.grid;
        if g.value(fused).shape() != [self.in_channels, s, s, s] {
            return Err(Error::shape("header", format!("expected [{}, {s}, {s}, {s}], got {:?}", self.in_channels, g.value(fused).shape())));
        }
        let mut x = g.conv3d(fused, p.get("head.conv.w")?, p.get("head.conv.b")?, ConvAttrs::same(3, PadMode::Zero))?;
        x = g.instance_norm(x, None, NORM_EPS)?;
        x = g.relu(x)?;
        x = g.conv3d(x, p.get("head.pool.w")?, p.get("head.pool.b")?, ConvAttrs::strided(POOL))?;
        x = g.relu(x)?;
        g.linear(x, p.get("head.fc.w")?, p.get("head.fc.b")?, true)
    }
}

/// Reference object size `(w, h, l)` the log-size outputs are relative to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizePrior(pub [f64; 3]);

impl Default for SizePrior {
    fn default() -> Self {
        SizePrior([1.7, 1.5, 4.0])
    }
}

/// Heading angle from a `(sin, cos)` pair; a zero pair reads as yaw 0.
pub fn yaw_from_pair(s: f64, c: f64) -> f64 {
    let n = s.hypot(c);
    if n < 1e-12 {
        0.0
    } else {
        (s / n).atan2(c / n)
    }
}

/// Turns raw outputs for `roi` into a box in camera coordinates.
pub fn decode_header(out: &[f64], roi: &Roi3D, cam: &Camera, prior: &SizePrior) -> Result<ObjectBox> {
    if out.len() != HEADER_OUTPUTS {
        return Err(Error::shape("header decode", format!("expected {HEADER_OUTPUTS} values, got {}", out.len())));
    }
    let (c, e) = (roi.center(), roi.extent());
    let uvd: [f64; 3] = std::array::from_fn(|a| c[a] + out[a] * e[a]);
    let center = cam.unproject([uvd[0], uvd[1], uvd[2].max(MIN_DISPARITY)]);
    let size = std::array::from_fn(|a| prior.0[a] * out[3 + a].clamp(-5.0, 5.0).exp());
    ObjectBox::new(center, size, yaw_from_pair(out[6], out[7]), sigmoid(out[8]))
}

/// Regression targets of `gt` relative to `roi` (first eight outputs).
pub fn header_target(gt: &ObjectBox, roi: &Roi3D, cam: &Camera, prior: &SizePrior) -> [f64; REGRESSION] {
    let (c, e) = (roi.center(), roi.extent());
    let q = gt.uvd(cam);
    let mut t = [0.0; REGRESSION];
    for a in 0..3 {
        t[a] = (q[a] - c[a]) / e[a];
        t[3 + a] = (gt.size[a] / prior.0[a]).ln();
    }
    t[6] = gt.yaw.sin();
    t[7] = gt.yaw.cos();
    t
}

/// L1 on the regression outputs for a matched RoI plus cross-entropy on the
/// confidence (target 1 if matched, 0 otherwise), both multiplied by `scale`.
pub fn header_loss<T: Scalar>(g: &mut Graph<T>, out: NodeId, target: Option<&[f64; REGRESSION]>, scale: f64) -> Result<NodeId> {
    if g.value(out).shape() != [HEADER_OUTPUTS] {
        return Err(Error::shape("header loss", format!("expected [{HEADER_OUTPUTS}], got {:?}", g.value(out).shape())));
    }
    let mut tv = [T::zero(); HEADER_OUTPUTS];
    let mut rw = [T::zero(); HEADER_OUTPUTS];
    let mut cw = [T::zero(); HEADER_OUTPUTS];
    cw[8] = T::one();
    if let Some(t) = target {
        for k in 0..REGRESSION {
            tv[k] = T::of(t[k]);
            rw[k] = T::one();
        }
        tv[8] = T::one();
    }
    let tn = g.constant(Tensor::from_vec(&[HEADER_OUTPUTS], tv.to_vec())?);
    let rn = g.constant(Tensor::from_vec(&[HEADER_OUTPUTS], rw.to_vec())?);
    let cn = g.constant(Tensor::from_vec(&[HEADER_OUTPUTS], cw.to_vec())?);
    let reg = g.smooth_l1(out, tn, Some(rn), 0.0, scale)?;
    let conf = g.bce_with_logits(out, tn, Some(cn), scale)?;
    g.add(reg, conf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cam() -> Camera {
        Camera::centered(200.0, 0.5, 256, 128).unwrap()
    }

    #[test]
    fn yaw_pairs() {
        assert_eq!(yaw_from_pair(0.0, 1.0), 0.0);
        assert!((yaw_from_pair(1.0, 0.0) - FRAC_PI_2).abs() < 1e-15);
        assert!((yaw_from_pair(2.0, 0.0) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn target_decodes_back_to_gt() {
        let gt = ObjectBox::new([1.5, 1.2, 11.0], [1.8, 1.4, 4.3], -1.2, 1.0).unwrap();
        let roi = Roi3D::from_center([150.0, 80.0, 9.0], [40.0, 30.0, 4.0]).unwrap();
        let t = header_target(&gt, &roi, &cam(), &SizePrior::default());
        let mut out = t.to_vec();
        out.push(40.0);
        let b = decode_header(&out, &roi, &cam(), &SizePrior::default()).unwrap();
        for a in 0..3 {
            assert!((b.center[a] - gt.center[a]).abs() < 1e-9);
            assert!((b.size[a] - gt.size[a]).abs() < 1e-9);
        }
        assert!((b.yaw - gt.yaw).abs() < 1e-12);
    }

    #[test]
    fn sizes_positive_for_any_output() {
        let roi = Roi3D::from_center([100.0, 60.0, 10.0], [20.0, 20.0, 3.0]).unwrap();
        let b = decode_header(&[0.0, 0.0, 0.0, -90.0, -1e6, 50.0, 0.3, -0.2, 0.0], &roi, &cam(), &SizePrior::default()).unwrap();
        assert!(b.size.iter().all(|&s| s > 0.0));
    }

    fn loss_of(out: &[f64], t: Option<&[f64; 8]>) -> f64 {
        let mut g = Graph::<f64>::new();
        let o = g.constant(Tensor::from_vec(&[9], out.to_vec()).unwrap());
        let l = header_loss(&mut g, o, t, 1.0).unwrap();
        g.value(l).data()[0]
    }

    #[test]
    fn exact_prediction_is_free() {
        let t = [0.1, -0.2, 0.05, 0.3, 0.0, -0.1, 0.6, 0.8];
        let mut out = t.to_vec();
        out.push(60.0);
        assert!(loss_of(&out, Some(&t)) < 1e-20);
        assert!(loss_of(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -60.0], None) < 1e-20);
    }

    #[test]
    fn opposite_heading_costs_two() {
        let yaw_t = |y: f64| [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, y.sin(), y.cos()];
        let out = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 60.0];
        assert!((loss_of(&out, Some(&yaw_t(PI))) - 2.0).abs() < 1e-12);
        let a = loss_of(&out, Some(&yaw_t(0.7)));
        let b = loss_of(&out, Some(&yaw_t(0.7 + 2.0 * PI)));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn forward_shape_and_guard() {
        let h = Header { in_channels: 3, channels: 4, grid: 8 };
        let mut store = ParamStore::<f64>::default();
        h.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::from_fn(&[3, 8, 8, 8], |i| (i as f64 * 0.1).cos()));
        let out = h.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(out).shape(), &[9]);
        let bad = g.constant(Tensor::zeros(&[2, 8, 8, 8]));
        assert!(h.forward(&mut g, &p, bad).is_err());
    }
}
