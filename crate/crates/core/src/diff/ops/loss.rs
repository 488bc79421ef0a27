//! Reducing losses: weighted smooth-L1 and binary cross-entropy on logits.

use super::{same_shape, PrimitiveKind};
use crate::diff::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// `0.5 r^2 / beta` inside `|r| < beta`, `|r| - 0.5 beta` outside; `beta = 0` is plain L1.
pub fn smooth_l1(r: f64, beta: f64) -> f64 {
    if r.abs() < beta {
        0.5 * r * r / beta
    } else {
        r.abs() - 0.5 * beta
    }
}

fn smooth_l1_grad<T: Scalar>(r: T, beta: T) -> T {
    if r.abs() < beta {
        r / beta
    } else if r > T::zero() {
        T::one()
    } else if r < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn check<T: Scalar>(kind: PrimitiveKind, a: &Tensor<T>, b: &Tensor<T>, w: Option<&Tensor<T>>) -> Result<()> {
    same_shape(kind, a, b)?;
    if let Some(w) = w {
        same_shape(kind, a, w)?;
    }
    Ok(())
}

fn weight<T: Scalar>(w: Option<&Tensor<T>>, i: usize) -> T {
    w.map_or(T::one(), |w| w.data()[i])
}

pub(super) fn smooth_l1_forward<T: Scalar>(
    beta: f64,
    scale: f64,
    p: &Tensor<T>,
    t: &Tensor<T>,
    w: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check(PrimitiveKind::SmoothL1, p, t, w)?;
    let beta = T::of(beta);
    let half = T::of(0.5);
    let mut acc = T::zero();
    for (i, (&pv, &tv)) in p.data().iter().zip(t.data()).enumerate() {
        let wi = weight(w, i);
        if wi == T::zero() {
            continue;
        }
        let r = pv - tv;
        let l = if r.abs() < beta { half * r * r / beta } else { r.abs() - half * beta };
        acc += wi * l;
    }
    Ok(Tensor::scalar(acc * T::of(scale)))
}

pub(super) fn smooth_l1_backward<T: Scalar>(
    beta: f64,
    scale: f64,
    p: &Tensor<T>,
    t: &Tensor<T>,
    w: Option<&Tensor<T>>,
    g: &Tensor<T>,
) -> Vec<Option<Tensor<T>>> {
    let beta = T::of(beta);
    let k = g.data()[0] * T::of(scale);
    let gp: Vec<T> = p
        .data()
        .iter()
        .zip(t.data())
        .enumerate()
        .map(|(i, (&pv, &tv))| k * weight(w, i) * smooth_l1_grad(pv - tv, beta))
        .collect();
    let gt = gp.iter().map(|&v| -v).collect();
    vec![
        Some(Tensor::from_vec(p.shape(), gp).expect("smooth-l1 grad")),
        Some(Tensor::from_vec(t.shape(), gt).expect("smooth-l1 grad")),
    ]
}

/// Numerically stable `BCE(sigmoid(x), t)`.
pub fn bce_with_logits(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

pub(super) fn bce_forward<T: Scalar>(scale: f64, x: &Tensor<T>, t: &Tensor<T>, w: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check(PrimitiveKind::BceWithLogits, x, t, w)?;
    let mut acc = T::zero();
    for (i, (&xv, &tv)) in x.data().iter().zip(t.data()).enumerate() {
        let wi = weight(w, i);
        if wi == T::zero() {
            continue;
        }
        acc += wi * (xv.max(T::zero()) - xv * tv + (-xv.abs()).exp().ln_1p());
    }
    Ok(Tensor::scalar(acc * T::of(scale)))
}

pub(super) fn bce_backward<T: Scalar>(
    scale: f64,
    x: &Tensor<T>,
    t: &Tensor<T>,
    w: Option<&Tensor<T>>,
    g: &Tensor<T>,
) -> Vec<Option<Tensor<T>>> {
    let k = g.data()[0] * T::of(scale);
    let mut gx = Vec::with_capacity(x.numel());
    let mut gt = Vec::with_capacity(x.numel());
    for (i, (&xv, &tv)) in x.data().iter().zip(t.data()).enumerate() {
        let kw = k * weight(w, i);
        let sig = T::one() / (T::one() + (-xv).exp());
        gx.push(kw * (sig - tv));
        gt.push(-kw * xv);
    }
    vec![
        Some(Tensor::from_vec(x.shape(), gx).expect("bce grad")),
        Some(Tensor::from_vec(t.shape(), gt).expect("bce grad")),
    ]
}
