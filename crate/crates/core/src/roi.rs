//! Fixed-size sampling of axis-aligned 3D regions of a cost volume.
//!
//! Coordinates are `(u, v, d)`: column, row and disparity level in volume
//! index units. A grid of `S` samples per axis places sample `i` at
//! `p_min + (i + 0.5) * extent / S`. Sampled features are `[C, S, S, S]`
//! ordered `(d, v, u)` like the volume itself.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, NodeId, SampleGrid, Tensor};
use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_GRID: usize = 16;
pub const DEFAULT_MARGIN: f64 = 3.0;
const MIN_EXTENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roi3D {
    pub p_min: [f64; 3],
    pub p_max: [f64; 3],
}

impl Roi3D {
    pub fn new(p_min: [f64; 3], p_max: [f64; 3]) -> Result<Self> {
        let roi = Roi3D { p_min, p_max };
        roi.validate()?;
        Ok(roi)
    }

    pub fn from_center(center: [f64; 3], extent: [f64; 3]) -> Result<Self> {
        let p_min = std::array::from_fn(|a| center[a] - 0.5 * extent[a]);
        let p_max = std::array::from_fn(|a| center[a] + 0.5 * extent[a]);
        Roi3D::new(p_min, p_max)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.p_min[a].is_finite() && self.p_max[a].is_finite()) || self.p_max[a] - self.p_min[a] < MIN_EXTENT {
                return Err(Error::Invalid(format!("degenerate RoI {:?} -> {:?}", self.p_min, self.p_max)));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.p_max[a] - self.p_min[a])
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| 0.5 * (self.p_min[a] + self.p_max[a]))
    }

    pub fn volume(&self) -> f64 {
        self.extent().iter().product()
    }

    /// Axis-aligned intersection over union.
    pub fn iou(&self, other: &Roi3D) -> f64 {
        let mut inter = 1.0;
        for a in 0..3 {
            let lo = self.p_min[a].max(other.p_min[a]);
            let hi = self.p_max[a].min(other.p_max[a]);
            if hi <= lo {
                return 0.0;
            }
            inter *= hi - lo;
        }
        inter / (self.volume() + other.volume() - inter)
    }

    /// Clips to a volume of `[D, H, W]` levels/pixels, keeping at least one
    /// unit per axis. `None` if the RoI lies entirely outside.
    pub fn clip(&self, dims: [usize; 3]) -> Option<Roi3D> {
        let lim = [dims[2] as f64 - 0.5, dims[1] as f64 - 0.5, dims[0] as f64 - 0.5];
        let mut p_min = [0.0; 3];
        let mut p_max = [0.0; 3];
        for a in 0..3 {
            let lo = self.p_min[a].max(-0.5);
            let hi = self.p_max[a].min(lim[a]);
            if hi - lo < 1.0 {
                return None;
            }
            p_min[a] = lo;
            p_max[a] = hi;
        }
        Some(Roi3D { p_min, p_max })
    }

    /// Coordinate of sample `i` of `s` along `axis` (0 = u, 1 = v, 2 = d).
    pub fn sample_coord(&self, axis: usize, i: usize, s: usize) -> f64 {
        self.p_min[axis] + (i as f64 + 0.5) * (self.p_max[axis] - self.p_min[axis]) / s as f64
    }

    /// `s^3` sample points ordered `(d, v, u)`.
    pub fn sample_grid(&self, s: usize) -> Result<SampleGrid> {
        self.validate()?;
        if s == 0 {
            return Err(Error::Invalid("grid size must be positive".into()));
        }
        let mut pts = Vec::with_capacity(s * s * s);
        for k in 0..s {
            let d = self.sample_coord(2, k, s);
            for j in 0..s {
                let v = self.sample_coord(1, j, s);
                for i in 0..s {
                    pts.push([self.sample_coord(0, i, s), v, d]);
                }
            }
        }
        SampleGrid::new(pts, vec![s, s, s])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Trilinear,
    Deep,
    Selective,
}

/// Features sampled from one RoI plus their validity.
#[derive(Clone, Debug)]
pub struct SampledRoi<T> {
    pub roi: Roi3D,
    pub size: usize,
    /// `[C, S, S, S]`; masked entries are exactly zero.
    pub features: NodeId,
    /// `[S, S, S]` of 0/1.
    pub mask: Tensor<T>,
    pub grid: Arc<SampleGrid>,
}

fn check_volume<T: Scalar>(g: &Graph<T>, v: NodeId) -> Result<()> {
    if g.value(v).rank() != 4 {
        return Err(Error::shape("roi sampling", format!("volume must be [C,D,H,W], got {:?}", g.value(v).shape())));
    }
    Ok(())
}

/// Trilinear interpolation on the RoI's sample grid.
pub fn trilinear_sample<T: Scalar>(g: &mut Graph<T>, v: NodeId, roi: &Roi3D, s: usize) -> Result<SampledRoi<T>> {
    check_volume(g, v)?;
    let grid = Arc::new(roi.sample_grid(s)?);
    let features = g.trilinear_sample(v, grid.clone())?;
    Ok(SampledRoi { roi: *roi, size: s, features, mask: Tensor::full(&[s, s, s], T::one()), grid })
}

/// Bilinear in `(u, v)` with a Catmull-Rom kernel along `d`.
pub fn deep_sample<T: Scalar>(g: &mut Graph<T>, v: NodeId, roi: &Roi3D, s: usize) -> Result<SampledRoi<T>> {
    check_volume(g, v)?;
    let grid = Arc::new(roi.sample_grid(s)?);
    let features = g.cubic_d_sample(v, grid.clone())?;
    Ok(SampledRoi { roi: *roi, size: s, features, mask: Tensor::full(&[s, s, s], T::one()), grid })
}

/// Keeps voxels within `margin` levels of the estimated surface in their
/// column; a column whose surface lies more than `margin` outside the RoI's
/// disparity range is dropped entirely. Returned `(d, v, u)`-ordered.
pub fn selective_mask(roi: &Roi3D, disp: &DisparityMap, s: usize, margin: f64) -> Vec<bool> {
    let mut mask = vec![false; s * s * s];
    let (d_lo, d_hi) = (roi.p_min[2] - margin, roi.p_max[2] + margin);
    for j in 0..s {
        let v = roi.sample_coord(1, j, s);
        for i in 0..s {
            let u = roi.sample_coord(0, i, s);
            let surface = disp.sample(u, v);
            if !(surface >= d_lo && surface <= d_hi) {
                continue;
            }
            for k in 0..s {
                if (roi.sample_coord(2, k, s) - surface).abs() <= margin {
                    mask[(k * s + j) * s + i] = true;
                }
            }
        }
    }
    mask
}

/// Samples a RoI with the chosen mode. Selective mode needs the estimated
/// disparity map in the volume's pixel frame.
pub fn roi_select<T: Scalar>(
    g: &mut Graph<T>,
    v: NodeId,
    roi: &Roi3D,
    disp: Option<&DisparityMap>,
    mode: SampleMode,
    s: usize,
    margin: f64,
) -> Result<SampledRoi<T>> {
    match mode {
        SampleMode::Trilinear => trilinear_sample(g, v, roi, s),
        SampleMode::Deep => deep_sample(g, v, roi, s),
        SampleMode::Selective => {
            let disp = disp.ok_or_else(|| Error::Invalid("selective sampling needs a disparity map".into()))?;
            let sampled = deep_sample(g, v, roi, s)?;
            let bits = selective_mask(roi, disp, s, margin);
            let mask = Tensor::from_fn(&[s, s, s], |i| if bits[i] { T::one() } else { T::zero() });
            let m = g.constant(mask.clone());
            let features = g.mask_zero(sampled.features, m)?;
            Ok(SampledRoi { features, mask, ..sampled })
        }
    }
}
