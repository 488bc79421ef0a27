use super::{same_shape, PrimitiveKind};
use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(super) fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(super) fn relu_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("relu grad")
}

pub(super) fn binary<T: Scalar>(
    kind: PrimitiveKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(kind, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

pub(super) fn mul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
    let ga = g.data().iter().zip(b.data()).map(|(&gv, &y)| gv * y).collect();
    let gb = g.data().iter().zip(a.data()).map(|(&gv, &x)| gv * x).collect();
    vec![
        Some(Tensor::from_vec(a.shape(), ga).expect("mul grad")),
        Some(Tensor::from_vec(b.shape(), gb).expect("mul grad")),
    ]
}

/// Number of leading entries each mask value covers (1 when shapes match).
fn mask_repeat(x: &[usize], m: &[usize]) -> Option<usize> {
    if x == m {
        return Some(1);
    }
    if m.len() < x.len() && x[x.len() - m.len()..] == *m {
        return Some(x[..x.len() - m.len()].iter().product());
    }
    None
}

fn apply_mask<T: Scalar>(values: &[T], mask: &[T], out: &mut [T]) {
    let period = mask.len();
    for (i, (o, &v)) in out.iter_mut().zip(values).enumerate() {
        *o = if mask[i % period] != T::zero() { v } else { T::zero() };
    }
}

pub(super) fn mask_zero<T: Scalar>(x: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    if mask_repeat(x.shape(), mask.shape()).is_none() {
        return Err(Error::shape(
            "mask-zero",
            format!("mask {:?} must equal input {:?} or its trailing dimensions", mask.shape(), x.shape()),
        ));
    }
    let mut out = Tensor::zeros(x.shape());
    apply_mask(x.data(), mask.data(), out.data_mut());
    Ok(out)
}

pub(super) fn mask_zero_backward<T: Scalar>(mask: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(g.shape());
    apply_mask(g.data(), mask.data(), out.data_mut());
    out
}
