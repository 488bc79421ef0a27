//! Occupancy back-projection of the estimated disparity and its fusion with
//! sampled cost-volume features.

use crate::diff::{Graph, NodeId, Tensor};
use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::roi::{Roi3D, SampledRoi};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// The disparity patch under a RoI's `(u, v)` footprint.
#[derive(Clone, Debug)]
pub struct Roi2D {
    pub size: usize,
    /// Sampled disparities, `S x S` row-major (`v` then `u`).
    pub values: Vec<f64>,
    /// `[u_min, v_min, u_max, v_max]` in pixels.
    pub rect: [f64; 4],
    /// The patch as a graph node `[1, S, S]`, when extracted from a graph.
    pub node: Option<NodeId>,
}

/// Binary `S^3` grid aligned with a sampled RoI, ordered `(d, v, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyRoi {
    pub size: usize,
    pub roi: Roi3D,
    pub grid: Vec<u8>,
}

impl OccupancyRoi {
    pub fn occupied(&self) -> usize {
        self.grid.iter().filter(|&&b| b == 1).count()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let s = self.size;
        Tensor::from_fn(&[1, s, s, s], |i| T::of(self.grid[i] as f64))
    }
}

fn footprint_points(roi: &Roi3D, s: usize) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(s * s);
    for j in 0..s {
        let v = roi.sample_coord(1, j, s);
        for i in 0..s {
            pts.push([roi.sample_coord(0, i, s), v, 0.0]);
        }
    }
    pts
}

fn check_footprint(roi: &Roi3D, width: usize, height: usize) -> Result<()> {
    let outside = roi.p_max[0] < 0.0
        || roi.p_min[0] > (width - 1) as f64
        || roi.p_max[1] < 0.0
        || roi.p_min[1] > (height - 1) as f64;
    if outside {
        return Err(Error::Invalid(format!("RoI footprint {:?} -> {:?} lies outside the image", roi.p_min, roi.p_max)));
    }
    Ok(())
}

/// Bilinearly samples the disparity map (`[1,H,W]` node) on the RoI's
/// `S x S` cell-center footprint; differentiable into the map.
pub fn extract_roi2d<T: Scalar>(g: &mut Graph<T>, disp: NodeId, roi: &Roi3D, s: usize) -> Result<Roi2D> {
    roi.validate()?;
    let (h, w) = match *g.value(disp).shape() {
        [1, h, w] => (h, w),
        ref other => return Err(Error::shape("extract_roi2d", format!("disparity must be [1,H,W], got {other:?}"))),
    };
    check_footprint(roi, w, h)?;
    let grid = crate::diff::SampleGrid::new(footprint_points(roi, s), vec![s, s])?;
    let node = g.trilinear_sample(disp, std::sync::Arc::new(grid))?;
    let values = g.value(node).data().iter().map(|v| v.as_f64()).collect();
    Ok(Roi2D { size: s, values, rect: [roi.p_min[0], roi.p_min[1], roi.p_max[0], roi.p_max[1]], node: Some(node) })
}

/// Same sampling on a plain map.
pub fn extract_roi2d_values(disp: &DisparityMap, roi: &Roi3D, s: usize) -> Result<Roi2D> {
    roi.validate()?;
    check_footprint(roi, disp.width, disp.height)?;
    let values = footprint_points(roi, s).iter().map(|p| disp.sample(p[0], p[1])).collect();
    Ok(Roi2D { size: s, values, rect: [roi.p_min[0], roi.p_min[1], roi.p_max[0], roi.p_max[1]], node: None })
}

/// Marks, per column, the cell nearest to the column's disparity when it lies
/// within the RoI's disparity range (ties round up).
pub fn back_project(r2d: &Roi2D, roi: &Roi3D, s: usize) -> Result<OccupancyRoi> {
    if r2d.size != s || r2d.values.len() != s * s {
        return Err(Error::Invalid(format!("2D RoI of size {} does not match grid {s}", r2d.size)));
    }
    let (lo, hi) = (roi.p_min[2], roi.p_max[2]);
    let mut grid = vec![0u8; s * s * s];
    for (col, &d) in r2d.values.iter().enumerate() {
        if !(d >= lo && d <= hi) {
            continue;
        }
        let x = (d - lo) / (hi - lo) * s as f64 - 0.5;
        let k = ((x + 0.5).floor().max(0.0) as usize).min(s - 1);
        grid[k * s * s + col] = 1;
    }
    Ok(OccupancyRoi { size: s, roi: *roi, grid })
}

/// Instance-normalizes the sampled features over their valid voxels and
/// appends the occupancy grid as one extra channel: `[C+1, S, S, S]`.
pub fn fuse<T: Scalar>(g: &mut Graph<T>, r3d: &SampledRoi<T>, occ: &OccupancyRoi) -> Result<NodeId> {
    if occ.size != r3d.size || occ.roi != r3d.roi {
        return Err(Error::Invalid("occupancy grid is not aligned with the sampled RoI".into()));
    }
    let extra = occ.to_tensor();
    fuse_channel(g, r3d, extra)
}

/// Fusion with the 2D patch instead of occupancy: the patch, expressed as a
/// position within the RoI's disparity range, is broadcast along `d`.
pub fn fuse_2d<T: Scalar>(g: &mut Graph<T>, r3d: &SampledRoi<T>, r2d: &Roi2D) -> Result<NodeId> {
    let s = r3d.size;
    if r2d.size != s {
        return Err(Error::Invalid("2D RoI is not aligned with the sampled RoI".into()));
    }
    let (lo, hi) = (r3d.roi.p_min[2], r3d.roi.p_max[2]);
    let extra = Tensor::from_fn(&[1, s, s, s], |i| T::of((r2d.values[i % (s * s)] - lo) / (hi - lo) - 0.5));
    fuse_channel(g, r3d, extra)
}

fn fuse_channel<T: Scalar>(g: &mut Graph<T>, r3d: &SampledRoi<T>, extra: Tensor<T>) -> Result<NodeId> {
    let m = g.constant(r3d.mask.clone());
    let normed = g.instance_norm(r3d.features, Some(m), NORM_EPS)?;
    let e = g.constant(extra);
    g.concat(&[normed, e], 0)
}
