//! Register-blocked implicit-GEMM loops for stride-1 convolution.
//!
//! Inputs are padded volumes flattened per channel; every kernel tap is a
//! constant offset into that flat layout, so no im2col buffer is needed.

use crate::scalar::Scalar;

const QB: usize = 32;
const OB: usize = 2;

/// Layout of a tap-offset correlation.
pub(super) struct Corr<'a, T> {
    /// Weights laid out `[out][tap][in]`.
    pub w: &'a [T],
    pub outs: usize,
    pub ins: usize,
    pub offsets: &'a [usize],
    /// Input channel stride in `x`.
    pub x_stride: usize,
    /// Output channel stride in `y`.
    pub y_stride: usize,
    /// Number of output positions per channel.
    pub n: usize,
}

/// `y[o, q] += sum_{t, i} w[o, t, i] * x[i, q + offsets[t]]`.
pub(super) fn correlate<T: Scalar>(p: &Corr<'_, T>, x: &[T], y: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { correlate_avx2(p, x, y) };
            return;
        }
    }
    correlate_body(p, x, y);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn correlate_avx2<T: Scalar>(p: &Corr<'_, T>, x: &[T], y: &mut [T]) {
    correlate_body(p, x, y);
}

/// Input channels processed together, bounding the cache working set.
const IG: usize = 8;
/// Output positions per cache tile.
const QC: usize = 2048;

#[inline(always)]
fn correlate_body<T: Scalar>(p: &Corr<'_, T>, x: &[T], y: &mut [T]) {
    let nt = p.offsets.len();
    let mut i0 = 0;
    while i0 < p.ins {
        let ig = IG.min(p.ins - i0);
        let mut q0 = 0;
        while q0 < p.n {
            let q1 = (q0 + QC).min(p.n);
            let mut o0 = 0;
            while o0 + OB <= p.outs {
                block::<T, OB>(p, &packed::<T, OB>(p, nt, o0), o0, i0..i0 + ig, q0..q1, x, y);
                o0 += OB;
            }
            while o0 < p.outs {
                block::<T, 1>(p, &packed::<T, 1>(p, nt, o0), o0, i0..i0 + ig, q0..q1, x, y);
                o0 += 1;
            }
            q0 = q1;
        }
        i0 += ig;
    }
}

/// Weights of outputs `o0..o0+B` as `[tap][in] -> [T; B]`.
fn packed<T: Scalar, const B: usize>(p: &Corr<'_, T>, nt: usize, o0: usize) -> Vec<[T; B]> {
    let mut v = Vec::with_capacity(nt * p.ins);
    for t in 0..nt {
        for i in 0..p.ins {
            v.push(std::array::from_fn(|o| p.w[((o0 + o) * nt + t) * p.ins + i]));
        }
    }
    v
}

#[inline(always)]
fn block<T: Scalar, const B: usize>(
    p: &Corr<'_, T>,
    wb: &[[T; B]],
    o0: usize,
    ins: std::ops::Range<usize>,
    qs: std::ops::Range<usize>,
    x: &[T],
    y: &mut [T],
) {
    let mut q0 = qs.start;
    while q0 + QB <= qs.end {
        let mut acc = [[T::zero(); QB]; B];
        for (t, &off) in p.offsets.iter().enumerate() {
            let wt = &wb[t * p.ins..(t + 1) * p.ins];
            for i in ins.clone() {
                let xs: &[T; QB] = x[i * p.x_stride + off + q0..][..QB].try_into().unwrap();
                let wv = &wt[i];
                for o in 0..B {
                    for j in 0..QB {
                        acc[o][j] += wv[o] * xs[j];
                    }
                }
            }
        }
        for (o, a) in acc.iter().enumerate() {
            let dst = &mut y[(o0 + o) * p.y_stride + q0..][..QB];
            for j in 0..QB {
                dst[j] += a[j];
            }
        }
        q0 += QB;
    }
    for q in q0..qs.end {
        for o in 0..B {
            let mut s = T::zero();
            for (t, &off) in p.offsets.iter().enumerate() {
                for i in ins.clone() {
                    s += wb[t * p.ins + i][o] * x[i * p.x_stride + off + q];
                }
            }
            y[(o0 + o) * p.y_stride + q] += s;
        }
    }
}

/// `gw[o, i, t] += sum_q g[o, q] * x[i, q + offsets[t]]` for `q < n`.
/// `gw` is laid out `[out][in][tap]`.
pub(super) struct TapDots<'a> {
    pub outs: usize,
    pub ins: usize,
    pub offsets: &'a [usize],
    pub g_stride: usize,
    pub x_stride: usize,
    pub n: usize,
}

pub(super) fn tap_dots<T: Scalar>(p: &TapDots<'_>, g: &[T], x: &[T], gw: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { tap_dots_avx2(p, g, x, gw) };
            return;
        }
    }
    tap_dots_body(p, g, x, gw);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tap_dots_avx2<T: Scalar>(p: &TapDots<'_>, g: &[T], x: &[T], gw: &mut [T]) {
    tap_dots_body(p, g, x, gw);
}

const L: usize = 8;

#[inline(always)]
fn tap_dots_body<T: Scalar>(p: &TapDots<'_>, g: &[T], x: &[T], gw: &mut [T]) {
    let nt = p.offsets.len();
    let mut q0 = 0;
    while q0 < p.n {
        let len = QC.min(p.n - q0);
        for i in 0..p.ins {
            for (t, &off) in p.offsets.iter().enumerate() {
                let xr = &x[i * p.x_stride + off + q0..][..len];
                for o in 0..p.outs {
                    let gr = &g[o * p.g_stride + q0..][..len];
                    gw[(o * p.ins + i) * nt + t] += dot(gr, xr);
                }
            }
        }
        q0 += len;
    }
}

#[inline(always)]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); L];
    let (ac, bc) = (a.chunks_exact(L), b.chunks_exact(L));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for j in 0..L {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s: T = acc.iter().copied().sum();
    for (x, y) in ar.iter().zip(br) {
        s += *x * *y;
    }
    s
}
