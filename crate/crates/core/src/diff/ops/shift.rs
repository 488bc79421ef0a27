//! Cost-volume construction: left features broadcast over disparity levels,
//! right features shifted right by `d` with zero fill, concatenated on channels.

use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn dims<T: Scalar>(l: &Tensor<T>, r: &Tensor<T>, levels: usize) -> Result<(usize, usize, usize)> {
    if l.rank() != 3 {
        return Err(Error::shape("shift-concat", format!("features must be [C,H,W], got {:?}", l.shape())));
    }
    super::same_shape(super::PrimitiveKind::ShiftConcat, l, r)?;
    let (c, h, w) = (l.shape()[0], l.shape()[1], l.shape()[2]);
    if levels == 0 || levels > w {
        return Err(Error::shape("shift-concat", format!("disparity levels {levels} must lie in [1, width={w}]")));
    }
    Ok((c, h, w))
}

pub(super) fn forward<T: Scalar>(levels: usize, l: &Tensor<T>, r: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = dims(l, r, levels)?;
    let plane = h * w;
    let vol = levels * plane;
    let mut out = vec![T::zero(); 2 * c * vol];
    let (ld, rd) = (l.data(), r.data());
    for ch in 0..c {
        let lsrc = &ld[ch * plane..(ch + 1) * plane];
        let rsrc = &rd[ch * plane..(ch + 1) * plane];
        for d in 0..levels {
            out[ch * vol + d * plane..ch * vol + (d + 1) * plane].copy_from_slice(lsrc);
            let dst = &mut out[(c + ch) * vol + d * plane..(c + ch) * vol + (d + 1) * plane];
            for y in 0..h {
                dst[y * w + d..(y + 1) * w].copy_from_slice(&rsrc[y * w..(y + 1) * w - d]);
            }
        }
    }
    Tensor::from_vec(&[2 * c, levels, h, w], out)
}

pub(super) fn backward<T: Scalar>(levels: usize, l: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
    let (c, h, w) = (l.shape()[0], l.shape()[1], l.shape()[2]);
    let plane = h * w;
    let vol = levels * plane;
    let gd = g.data();
    let mut gl = vec![T::zero(); c * plane];
    let mut gr = vec![T::zero(); c * plane];
    for ch in 0..c {
        for d in 0..levels {
            let src = &gd[ch * vol + d * plane..ch * vol + (d + 1) * plane];
            for (a, &v) in gl[ch * plane..(ch + 1) * plane].iter_mut().zip(src) {
                *a += v;
            }
            let src = &gd[(c + ch) * vol + d * plane..(c + ch) * vol + (d + 1) * plane];
            let dst = &mut gr[ch * plane..(ch + 1) * plane];
            for y in 0..h {
                for x in 0..w - d {
                    dst[y * w + x] += src[y * w + x + d];
                }
            }
        }
    }
    vec![
        Some(Tensor::from_vec(l.shape(), gl).expect("shift grad")),
        Some(Tensor::from_vec(l.shape(), gr).expect("shift grad")),
    ]
}
