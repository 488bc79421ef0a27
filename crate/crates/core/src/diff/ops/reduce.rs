use crate::diff::tensor::{split_axis, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::shape(op, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(())
}

/// Resolves (batch, in) for the linear primitive.
fn linear_dims<T: Scalar>(flatten: bool, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if w.rank() != 2 {
        return Err(Error::shape("linear", format!("weight must be [out,in], got {:?}", w.shape())));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if b.shape() != [out] {
        return Err(Error::shape("linear", format!("dimension 0 (bias): expected [{out}], got {:?}", b.shape())));
    }
    if flatten {
        if x.numel() != inp {
            return Err(Error::shape("linear", format!("flattened input holds {} values, weight expects {inp}", x.numel())));
        }
        return Ok((1, inp, out));
    }
    if x.rank() != 2 || x.shape()[1] != inp {
        return Err(Error::shape("linear", format!("dimension 1: input {:?} does not end in {inp}", x.shape())));
    }
    Ok((x.shape()[0], inp, out))
}

pub(super) fn linear_forward<T: Scalar>(flatten: bool, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, inp, out) = linear_dims(flatten, x, w, b)?;
    let mut y = vec![T::zero(); n * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(b.data());
    }
    // y[N,out] += x[N,in] * w^T
    T::gemm(n, inp, out, T::one(), x.data(), (inp as isize, 1), w.data(), (1, inp as isize), T::one(), &mut y, (out as isize, 1));
    let shape = if flatten { vec![out] } else { vec![n, out] };
    Tensor::from_vec(&shape, y)
}

pub(super) fn linear_backward<T: Scalar>(
    flatten: bool,
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let n = if flatten { 1 } else { x.shape()[0] };
    let gd = g.data();
    let gx = needs[0].then(|| {
        let mut gx = vec![T::zero(); n * inp];
        T::gemm(n, out, inp, T::one(), gd, (out as isize, 1), w.data(), (inp as isize, 1), T::zero(), &mut gx, (inp as isize, 1));
        Tensor::from_vec(x.shape(), gx).expect("linear grad x")
    });
    let gw = needs[1].then(|| {
        let mut gw = vec![T::zero(); out * inp];
        T::gemm(out, n, inp, T::one(), gd, (1, out as isize), x.data(), (inp as isize, 1), T::zero(), &mut gw, (inp as isize, 1));
        Tensor::from_vec(w.shape(), gw).expect("linear grad w")
    });
    let gb = needs[2].then(|| {
        let mut gb = vec![T::zero(); out];
        for row in gd.chunks(out) {
            for (a, &v) in gb.iter_mut().zip(row) {
                *a += v;
            }
        }
        Tensor::from_vec(&[out], gb).expect("linear grad b")
    });
    vec![gx, gw, gb]
}

pub(super) fn softmax_forward<T: Scalar>(axis: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_axis("softmax-axis", axis, x.rank())?;
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut y = Tensor::zeros(x.shape());
    let (xd, yd) = (x.data(), y.data_mut());
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..n {
                m = m.max(xd[at(k)]);
            }
            let mut z = T::zero();
            for k in 0..n {
                let e = (xd[at(k)] - m).exp();
                yd[at(k)] = e;
                z += e;
            }
            for k in 0..n {
                yd[at(k)] /= z;
            }
        }
    }
    Ok(y)
}

pub(super) fn softmax_backward<T: Scalar>(axis: usize, y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (outer, n, inner) = split_axis(y.shape(), axis);
    let mut gx = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), g.data());
    let out = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let dot: T = (0..n).map(|k| gd[at(k)] * yd[at(k)]).sum();
            for k in 0..n {
                out[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    gx
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &v)| v).collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

pub(super) fn wis_forward<T: Scalar>(axis: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_axis("weighted-index-sum", axis, x.rank())?;
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut y = vec![T::zero(); outer * inner];
    let xd = x.data();
    for o in 0..outer {
        for k in 0..n {
            let w = T::of(k as f64);
            let row = &xd[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (acc, &v) in y[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += w * v;
            }
        }
    }
    Tensor::from_vec(&reduced_shape(x.shape(), axis), y)
}

pub(super) fn wis_backward<T: Scalar>(axis: usize, x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut gx = Tensor::zeros(x.shape());
    let gd = g.data();
    let out = gx.data_mut();
    for o in 0..outer {
        for k in 0..n {
            let w = T::of(k as f64);
            let row = &mut out[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (dst, &v) in row.iter_mut().zip(&gd[o * inner..(o + 1) * inner]) {
                *dst = w * v;
            }
        }
    }
    gx
}

pub(super) fn concat_forward<T: Scalar>(axis: usize, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs[0];
    check_axis("concat-axis", axis, first.rank())?;
    for x in &xs[1..] {
        if x.rank() != first.rank() {
            return Err(Error::shape("concat-axis", format!("rank mismatch {:?} vs {:?}", first.shape(), x.shape())));
        }
        for (d, (&a, &b)) in first.shape().iter().zip(x.shape()).enumerate() {
            if d != axis && a != b {
                return Err(Error::shape("concat-axis", format!("dimension {d} differs: {a} vs {b}")));
            }
        }
    }
    let total: usize = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let n = x.shape()[axis];
            data.extend_from_slice(&x.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    Tensor::from_vec(&shape, data)
}

pub(super) fn concat_backward<T: Scalar>(axis: usize, xs: &[&Tensor<T>], g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
    let (outer, total, inner) = split_axis(g.shape(), axis);
    let mut grads: Vec<Vec<T>> = xs.iter().map(|x| Vec::with_capacity(x.numel())).collect();
    let gd = g.data();
    for o in 0..outer {
        let mut offset = o * total * inner;
        for (x, buf) in xs.iter().zip(grads.iter_mut()) {
            let len = x.shape()[axis] * inner;
            buf.extend_from_slice(&gd[offset..offset + len]);
            offset += len;
        }
    }
    xs.iter()
        .zip(grads)
        .map(|(x, d)| Some(Tensor::from_vec(x.shape(), d).expect("concat grad")))
        .collect()
}
