//! Volumetric point sampling: trilinear, and bilinear-in-(u,v) with a 4-tap
//! Catmull-Rom kernel along d.
//!
//! Coordinates are array indices: `(u, v, d)` addresses column `u`, row `v`,
//! disparity slice `d`. Out-of-range coordinates clamp to the border.

use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sample points plus the trailing output shape they are arranged in.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub points: Vec<[f64; 3]>,
    pub shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Trilinear,
    CubicD,
}

/// Catmull-Rom weights for taps at offsets -1, 0, 1, 2 given fraction `t`.
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Two-tap linear stencil along one axis.
fn linear_taps(x: f64, n: usize) -> [(usize, f64); 2] {
    if n == 1 {
        return [(0, 1.0), (0, 0.0)];
    }
    let x = x.clamp(0.0, (n - 1) as f64);
    let i0 = (x.floor() as usize).min(n - 2);
    let t = x - i0 as f64;
    [(i0, 1.0 - t), (i0 + 1, t)]
}

fn cubic_taps(x: f64, n: usize) -> [(usize, f64); 4] {
    let x = x.clamp(0.0, (n - 1) as f64);
    let i0 = x.floor() as isize;
    let w = catmull_rom_weights(x - i0 as f64);
    let idx = |k: isize| (i0 + k).clamp(0, n as isize - 1) as usize;
    [(idx(-1), w[0]), (idx(0), w[1]), (idx(1), w[2]), (idx(2), w[3])]
}

impl SampleGrid {
    pub fn new(points: Vec<[f64; 3]>, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != points.len() || points.is_empty() {
            return Err(Error::shape(
                "sample",
                format!("{} points cannot fill shape {shape:?}", points.len()),
            ));
        }
        Ok(SampleGrid { points, shape })
    }

    /// Per-point (flat in-plane index, weight) stencils for a `[D,H,W]` volume.
    pub fn stencils(&self, kernel: Kernel, dims: [usize; 3]) -> Vec<Vec<(usize, f64)>> {
        let [d, h, w] = dims;
        self.points
            .iter()
            .map(|&[u, v, z]| {
                let tu = linear_taps(u, w);
                let tv = linear_taps(v, h);
                let dz: Vec<(usize, f64)> = match kernel {
                    Kernel::Trilinear => linear_taps(z, d).to_vec(),
                    Kernel::CubicD => cubic_taps(z, d).to_vec(),
                };
                let mut st = Vec::with_capacity(dz.len() * 4);
                for &(zi, wz) in &dz {
                    for &(yi, wy) in &tv {
                        for &(xi, wx) in &tu {
                            let wt = wz * wy * wx;
                            if wt != 0.0 {
                                st.push(((zi * h + yi) * w + xi, wt));
                            }
                        }
                    }
                }
                st
            })
            .collect()
    }
}

fn dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, [usize; 3])> {
    match *x.shape() {
        [c, d, h, w] => Ok((c, [d, h, w])),
        [c, h, w] => Ok((c, [1, h, w])),
        _ => Err(Error::shape("sample", format!("volume must be [C,D,H,W] or [C,H,W], got {:?}", x.shape()))),
    }
}

pub(super) fn forward<T: Scalar>(grid: &SampleGrid, kernel: Kernel, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, dhw) = dims(x)?;
    let plane: usize = dhw.iter().product();
    let st = grid.stencils(kernel, dhw);
    let np = grid.points.len();
    let mut out = vec![T::zero(); c * np];
    let xd = x.data();
    for ch in 0..c {
        let src = &xd[ch * plane..(ch + 1) * plane];
        for (o, s) in out[ch * np..(ch + 1) * np].iter_mut().zip(&st) {
            let mut acc = T::zero();
            for &(i, w) in s {
                acc += T::of(w) * src[i];
            }
            *o = acc;
        }
    }
    let mut shape = vec![c];
    shape.extend_from_slice(&grid.shape);
    Tensor::from_vec(&shape, out)
}

pub(super) fn backward<T: Scalar>(grid: &SampleGrid, kernel: Kernel, x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (c, dhw) = dims(x).expect("validated in forward");
    let plane: usize = dhw.iter().product();
    let st = grid.stencils(kernel, dhw);
    let np = grid.points.len();
    let mut gx = Tensor::zeros(x.shape());
    let gd = g.data();
    let out = gx.data_mut();
    for ch in 0..c {
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for (&gv, s) in gd[ch * np..(ch + 1) * np].iter().zip(&st) {
            if gv == T::zero() {
                continue;
            }
            for &(i, w) in s {
                dst[i] += T::of(w) * gv;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catmull_rom_partition_of_unity_and_nodes() {
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let s: f64 = catmull_rom_weights(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(catmull_rom_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn catmull_rom_reproduces_quadratics() {
        let f = |x: f64| 0.3 * x * x - 1.1 * x + 2.0;
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let w = catmull_rom_weights(t);
            let v: f64 = (0..4).map(|j| w[j] * f(j as f64 - 1.0)).sum();
            assert!((v - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn clamps_out_of_range_points() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let grid = SampleGrid::new(vec![[-5.0, -5.0, -5.0], [9.0, 9.0, 9.0]], vec![2]).unwrap();
        let y = forward(&grid, Kernel::Trilinear, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 7.0]);
    }
}
