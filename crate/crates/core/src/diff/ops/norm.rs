//! Per-channel instance normalization with an optional validity mask.
//!
//! Masked entries are excluded from the statistics and come out as zero.
//! A channel with fewer than two valid entries passes through unnormalized.

use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn validate<T: Scalar>(x: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<usize> {
    if x.rank() < 2 {
        return Err(Error::shape("instance-norm", format!("input must be [C, ...], got {:?}", x.shape())));
    }
    let spatial = x.numel() / x.shape()[0];
    if let Some(m) = mask {
        if m.shape() != &x.shape()[1..] {
            return Err(Error::shape(
                "instance-norm",
                format!("mask {:?} must match trailing dimensions of {:?}", m.shape(), x.shape()),
            ));
        }
    }
    Ok(spatial)
}

struct Stats<T> {
    count: usize,
    mean: T,
    inv_std: T,
}

fn stats<T: Scalar>(xs: &[T], valid: &dyn Fn(usize) -> bool, eps: T) -> Stats<T> {
    let mut count = 0usize;
    let mut sum = T::zero();
    for (i, &v) in xs.iter().enumerate() {
        if valid(i) {
            count += 1;
            sum += v;
        }
    }
    if count < 2 {
        return Stats { count, mean: T::zero(), inv_std: T::one() };
    }
    let n = T::of(count as f64);
    let mean = sum / n;
    let mut var = T::zero();
    for (i, &v) in xs.iter().enumerate() {
        if valid(i) {
            var += (v - mean) * (v - mean);
        }
    }
    var /= n;
    Stats { count, mean, inv_std: T::one() / (var + eps).sqrt() }
}

pub(super) fn forward<T: Scalar>(eps: f64, x: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let spatial = validate(x, mask)?;
    let valid = |i: usize| mask.is_none_or(|m| m.data()[i] != T::zero());
    let mut y = Tensor::zeros(x.shape());
    for (xc, yc) in x.data().chunks(spatial).zip(y.data_mut().chunks_mut(spatial)) {
        let s = stats(xc, &valid, T::of(eps));
        for (i, (&v, o)) in xc.iter().zip(yc.iter_mut()).enumerate() {
            if !valid(i) {
                continue;
            }
            *o = if s.count < 2 { v } else { (v - s.mean) * s.inv_std };
        }
    }
    Ok(y)
}

pub(super) fn backward<T: Scalar>(eps: f64, x: &Tensor<T>, mask: Option<&Tensor<T>>, g: &Tensor<T>) -> Tensor<T> {
    let spatial = x.numel() / x.shape()[0];
    let valid = |i: usize| mask.is_none_or(|m| m.data()[i] != T::zero());
    let mut gx = Tensor::zeros(x.shape());
    for ((xc, gc), oc) in x.data().chunks(spatial).zip(g.data().chunks(spatial)).zip(gx.data_mut().chunks_mut(spatial)) {
        let s = stats(xc, &valid, T::of(eps));
        if s.count < 2 {
            for (i, (&gv, o)) in gc.iter().zip(oc.iter_mut()).enumerate() {
                if valid(i) {
                    *o = gv;
                }
            }
            continue;
        }
        let n = T::of(s.count as f64);
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (i, (&xv, &gv)) in xc.iter().zip(gc).enumerate() {
            if valid(i) {
                sum_g += gv;
                sum_gx += gv * (xv - s.mean) * s.inv_std;
            }
        }
        for (i, ((&xv, &gv), o)) in xc.iter().zip(gc).zip(oc.iter_mut()).enumerate() {
            if valid(i) {
                let xhat = (xv - s.mean) * s.inv_std;
                *o = s.inv_std / n * (n * gv - sum_g - xhat * sum_gx);
            }
        }
    }
    gx
}
