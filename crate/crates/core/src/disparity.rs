//! Soft-argmax disparity regression, its loss, depth conversion and depth
//! metrics.

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Disparities at or below this many pixels have no finite depth.
pub const MIN_DISPARITY: f64 = 1e-3;

/// Dense per-pixel map with a validity mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

pub type DisparityMap = Map;
pub type DepthMap = Map;
/// Grayscale intensities in `[0, 1]`.
pub type Image = Map;

impl Map {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != values.len() || width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "map of {width}x{height} needs {} values and flags, got {} and {}",
                width * height,
                values.len(),
                valid.len()
            )));
        }
        Ok(Map { width, height, values, valid })
    }

    /// Every finite entry is valid.
    pub fn dense(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Map::new(width, height, values, valid)
    }

    /// From a `[H,W]` or `[1,H,W]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [h, w] | [1, h, w] => (h, w),
            _ => return Err(Error::shape("map", format!("expected [H,W] or [1,H,W], got {:?}", t.shape()))),
        };
        Map::dense(w, h, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, self.height, self.width], |i| T::of(self.values[i]))
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Bilinear interpolation at real pixel coordinates, clamped to the border.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(self.width - 1), (v0 + 1).min(self.height - 1));
        let (tu, tv) = (u - u0 as f64, v - v0 as f64);
        let top = self.get(u0, v0) * (1.0 - tu) + self.get(u1, v0) * tu;
        let bottom = self.get(u0, v1) * (1.0 - tu) + self.get(u1, v1) * tu;
        top * (1.0 - tv) + bottom * tv
    }

    /// Sub-window `[u0, u0+w) x [v0, v0+h)`.
    pub fn crop(&self, u0: usize, v0: usize, w: usize, h: usize) -> Result<Self> {
        if u0 + w > self.width || v0 + h > self.height {
            return Err(Error::Invalid("crop window exceeds the map".into()));
        }
        let mut values = Vec::with_capacity(w * h);
        let mut valid = Vec::with_capacity(w * h);
        for v in v0..v0 + h {
            values.extend_from_slice(&self.values[v * self.width + u0..][..w]);
            valid.extend_from_slice(&self.valid[v * self.width + u0..][..w]);
        }
        Map::new(w, h, values, valid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoGeometry {
    pub focal: f64,
    pub baseline: f64,
}

impl StereoGeometry {
    pub fn new(focal: f64, baseline: f64) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) || !(baseline > 0.0 && baseline.is_finite()) {
            return Err(Error::Invalid(format!("focal {focal} and baseline {baseline} must be positive")));
        }
        Ok(StereoGeometry { focal, baseline })
    }

    pub fn fb(&self) -> f64 {
        self.focal * self.baseline
    }
}

/// Index-weighted softmax mean along the disparity axis. Accepts `[D,H,W]`
/// or `[1,D,H,W]` logits and yields `[H,W]` or `[1,H,W]`.
pub fn soft_argmax<T: Scalar>(g: &mut Graph<T>, logits: NodeId) -> Result<NodeId> {
    let axis = match g.value(logits).rank() {
        3 => 0,
        4 => 1,
        r => return Err(Error::shape("soft_argmax", format!("expected rank 3 or 4 logits, got rank {r}"))),
    };
    let p = g.softmax(logits, axis)?;
    g.weighted_index_sum(p, axis)
}

/// Tensor-level soft-argmax.
pub fn soft_argmax_values<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let d = soft_argmax(&mut g, x)?;
    Ok(g.value(d).clone())
}

/// Per-pixel weights `valid / N` for the disparity loss.
pub fn loss_weights<T: Scalar>(gt: &DisparityMap) -> Result<Tensor<T>> {
    let n = gt.valid_count();
    if n == 0 {
        return Err(Error::Invalid("disparity loss needs at least one valid ground-truth pixel".into()));
    }
    let w = 1.0 / n as f64;
    Ok(Tensor::from_fn(&[1, gt.height, gt.width], |i| if gt.valid[i] { T::of(w) } else { T::zero() }))
}

/// Mean smooth-L1 over valid ground-truth pixels. `pred` is `[1,H,W]`.
pub fn disparity_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, gt: &DisparityMap) -> Result<NodeId> {
    let weights = loss_weights(gt)?;
    let target = Tensor::from_fn(&[1, gt.height, gt.width], |i| if gt.valid[i] { T::of(gt.values[i]) } else { T::zero() });
    let pred = match g.value(pred).rank() {
        3 => pred,
        _ => return Err(Error::shape("disparity_loss", format!("prediction must be [1,H,W], got {:?}", g.value(pred).shape()))),
    };
    let t = g.constant(target);
    let w = g.constant(weights);
    g.smooth_l1(pred, t, Some(w), 1.0, 1.0)
}

/// Loss value on plain maps.
pub fn disparity_loss_value(pred: &DisparityMap, gt: &DisparityMap) -> Result<f64> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Invalid("prediction and ground truth differ in size".into()));
    }
    let mut g = Graph::<f64>::new();
    let p = g.constant(pred.to_tensor());
    let l = disparity_loss(&mut g, p, gt)?;
    Ok(g.value(l).data()[0])
}

/// `z = f b / d` with disparities at or below [`MIN_DISPARITY`] marked invalid.
pub fn disparity_to_depth(d: &DisparityMap, geom: &StereoGeometry) -> DepthMap {
    convert(d, geom)
}

/// `d = f b / z`, guarded like [`disparity_to_depth`].
pub fn depth_to_disparity(z: &DepthMap, geom: &StereoGeometry) -> DisparityMap {
    convert(z, geom)
}

fn convert(m: &Map, geom: &StereoGeometry) -> Map {
    let fb = geom.fb();
    let mut values = Vec::with_capacity(m.values.len());
    let mut valid = Vec::with_capacity(m.values.len());
    for (&x, &ok) in m.values.iter().zip(&m.valid) {
        if ok && x.is_finite() && x > MIN_DISPARITY {
            values.push(fb / x);
            valid.push(true);
        } else {
            values.push(0.0);
            valid.push(false);
        }
    }
    Map { width: m.width, height: m.height, values, valid }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub count: usize,
}

/// Predicted depths are clipped here before scoring, as in common driving benchmarks.
pub const MAX_EVAL_DEPTH: f64 = 80.0;

/// Accumulates depth errors over many maps before averaging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthAccumulator {
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    count: usize,
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: &DepthMap, gt: &DepthMap) -> Result<()> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::Invalid("depth maps differ in size".into()));
        }
        for i in 0..gt.values.len() {
            if !(pred.valid[i] && gt.valid[i]) {
                continue;
            }
            let (z, zh) = (gt.values[i], pred.values[i].min(MAX_EVAL_DEPTH));
            if z <= 0.0 {
                return Err(Error::Invalid("ground-truth depth must be positive on valid pixels".into()));
            }
            let e = z - zh;
            self.abs_rel += e.abs() / z;
            self.sq_rel += e * e / z;
            self.sq += e * e;
            self.count += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DepthMetrics> {
        if self.count == 0 {
            return Err(Error::Invalid("no pixel is valid in both depth maps".into()));
        }
        let n = self.count as f64;
        Ok(DepthMetrics { abs_rel: self.abs_rel / n, sq_rel: self.sq_rel / n, rmse: (self.sq / n).sqrt(), count: self.count })
    }
}

/// Abs-rel, sq-rel and RMSE over pixels valid in both maps, predictions capped at [`MAX_EVAL_DEPTH`].
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    let mut acc = DepthAccumulator::default();
    acc.add(pred, gt)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(logits: Vec<f64>) -> f64 {
        let d = logits.len();
        let t = Tensor::from_vec(&[d, 1, 1], logits).unwrap();
        soft_argmax_values(&t).unwrap().data()[0]
    }

    #[test]
    fn saturated_logit_recovers_index() {
        let mut l = vec![0.0; 8];
        l[5] = 1000.0;
        assert!((column(l) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_logits_give_center() {
        assert_eq!(column(vec![0.0; 48]), 23.5);
    }

    #[test]
    fn two_level_hand_value() {
        assert!((column(vec![0.0, 3f64.ln()]) - 0.75).abs() < 1e-12);
    }

    fn one_pixel(v: f64) -> Map {
        Map::dense(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(disparity_loss_value(&one_pixel(3.0), &one_pixel(3.0)).unwrap(), 0.0);
        assert!((disparity_loss_value(&one_pixel(1.5), &one_pixel(2.0)).unwrap() - 0.125).abs() < 1e-12);
        assert!((disparity_loss_value(&one_pixel(0.0), &one_pixel(2.0)).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn loss_needs_valid_pixels() {
        let gt = Map::new(1, 1, vec![1.0], vec![false]).unwrap();
        assert!(disparity_loss_value(&one_pixel(1.0), &gt).is_err());
    }

    #[test]
    fn depth_conversion_examples() {
        let g = StereoGeometry::new(100.0, 0.5).unwrap();
        let z = disparity_to_depth(&Map::dense(3, 1, vec![10.0, 20.0, 0.0]).unwrap(), &g);
        assert_eq!(z.values[0], 5.0);
        assert_eq!(z.values[1], 2.5);
        assert!(!z.valid[2]);
        assert!(z.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn metric_examples() {
        let m = depth_metrics(&one_pixel(1.0), &one_pixel(2.0)).unwrap();
        assert_eq!((m.abs_rel, m.sq_rel, m.rmse), (0.5, 0.5, 1.0));
        let z = Map::dense(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = depth_metrics(&z, &z).unwrap();
        assert_eq!((m.abs_rel, m.sq_rel, m.rmse), (0.0, 0.0, 0.0));
        let none = Map::new(1, 1, vec![1.0], vec![false]).unwrap();
        assert!(depth_metrics(&none, &one_pixel(1.0)).is_err());
    }

    #[test]
    fn far_predictions_are_capped() {
        let m = depth_metrics(&one_pixel(1e6), &one_pixel(40.0)).unwrap();
        assert_eq!(m.rmse, MAX_EVAL_DEPTH - 40.0);
    }

    #[test]
    fn geometry_must_be_positive() {
        assert!(StereoGeometry::new(200.0, 0.0).is_err());
        assert!(StereoGeometry::new(-1.0, 0.5).is_err());
    }
}
