//! 2D and 3D convolution through per-output-slice im2col and GEMM.
//!
//! Conv2d is the depth-1 case of the 3D kernel.

use serde::{Deserialize, Serialize};

use super::kernel;
use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadMode {
    Zero,
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvAttrs {
    pub stride: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
}

impl ConvAttrs {
    pub fn same(kernel: usize, pad_mode: PadMode) -> Self {
        ConvAttrs { stride: 1, padding: kernel / 2, pad_mode }
    }

    pub fn strided(kernel: usize) -> Self {
        ConvAttrs { stride: kernel, padding: 0, pad_mode: PadMode::Zero }
    }
}

/// Fully resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    o: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    sd: usize,
    sh: usize,
    sw: usize,
    pd: usize,
    ph: usize,
    pw: usize,
    od: usize,
    oh: usize,
    ow: usize,
    replicate: bool,
}

impl Geom {
    fn k(&self) -> usize {
        self.c * self.kd * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.oh * self.ow
    }
}

fn out_extent(op: &'static str, axis: &str, n: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if s == 0 {
        return Err(Error::shape(op, "stride must be positive"));
    }
    if n + 2 * p < k {
        return Err(Error::shape(
            op,
            format!("{axis} extent {n} (padding {p}) is smaller than kernel {k}"),
        ));
    }
    Ok((n + 2 * p - k) / s + 1)
}

fn geom3d<T: Scalar>(op: &'static str, a: &ConvAttrs, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, depth: bool) -> Result<Geom> {
    let (xs, ws) = (x.shape(), w.shape());
    let (c, d, h, wd) = match (depth, xs.len()) {
        (true, 4) => (xs[0], xs[1], xs[2], xs[3]),
        (false, 3) => (xs[0], 1, xs[1], xs[2]),
        _ => return Err(Error::shape(op, format!("input rank {} unsupported: {xs:?}", xs.len()))),
    };
    let (o, wc, kd, kh, kw) = match (depth, ws.len()) {
        (true, 5) => (ws[0], ws[1], ws[2], ws[3], ws[4]),
        (false, 4) => (ws[0], ws[1], 1, ws[2], ws[3]),
        _ => return Err(Error::shape(op, format!("weight rank {} unsupported: {ws:?}", ws.len()))),
    };
    if wc != c {
        return Err(Error::shape(op, format!("dimension 1 (input channels): weight has {wc}, input has {c}")));
    }
    if b.shape() != [o] {
        return Err(Error::shape(op, format!("dimension 0 (bias): expected [{o}], got {:?}", b.shape())));
    }
    let (sd, pd) = if depth { (a.stride, a.padding) } else { (1, 0) };
    let od = out_extent(op, "depth", d, kd, sd, pd)?;
    let oh = out_extent(op, "height", h, kh, a.stride, a.padding)?;
    let ow = out_extent(op, "width", wd, kw, a.stride, a.padding)?;
    Ok(Geom {
        c,
        d,
        h,
        w: wd,
        o,
        kd,
        kh,
        kw,
        sd,
        sh: a.stride,
        sw: a.stride,
        pd,
        ph: a.padding,
        pw: a.padding,
        od,
        oh,
        ow,
        replicate: a.pad_mode == PadMode::Replicate,
    })
}

/// Maps an output coordinate plus kernel tap to an input index, if any.
#[inline]
fn src(o: usize, s: usize, k: usize, p: usize, n: usize, replicate: bool) -> Option<usize> {
    let i = (o * s + k) as isize - p as isize;
    if i >= 0 && (i as usize) < n {
        Some(i as usize)
    } else if replicate {
        Some(i.clamp(0, n as isize - 1) as usize)
    } else {
        None
    }
}

/// Fills `col` (`K x N`, row-major) for output depth slice `zo`.
fn im2col<T: Scalar>(g: &Geom, x: &[T], zo: usize, col: &mut [T]) {
    let n = g.n();
    let plane = g.h * g.w;
    let mut row = 0;
    for c in 0..g.c {
        for a in 0..g.kd {
            let zi = src(zo, g.sd, a, g.pd, g.d, g.replicate);
            for b in 0..g.kh {
                for e in 0..g.kw {
                    let dst = &mut col[row * n..(row + 1) * n];
                    row += 1;
                    let Some(zi) = zi else {
                        dst.fill(T::zero());
                        continue;
                    };
                    let base = (c * g.d + zi) * plane;
                    for yo in 0..g.oh {
                        let line = &mut dst[yo * g.ow..(yo + 1) * g.ow];
                        let Some(yi) = src(yo, g.sh, b, g.ph, g.h, g.replicate) else {
                            line.fill(T::zero());
                            continue;
                        };
                        let xrow = &x[base + yi * g.w..base + (yi + 1) * g.w];
                        if g.sw == 1 {
                            // Valid output columns read xrow[xo + e - pw].
                            let lo = g.pw.saturating_sub(e).min(g.ow);
                            let hi = (g.w + g.pw).saturating_sub(e).min(g.ow).max(lo);
                            if hi > lo {
                                let start = lo + e - g.pw;
                                line[lo..hi].copy_from_slice(&xrow[start..start + (hi - lo)]);
                            }
                            let (first, last) = (xrow[0], xrow[g.w - 1]);
                            let (fill_lo, fill_hi) =
                                if g.replicate { (first, last) } else { (T::zero(), T::zero()) };
                            line[..lo].fill(fill_lo);
                            line[hi..].fill(fill_hi);
                        } else {
                            for (xo, v) in line.iter_mut().enumerate() {
                                *v = match src(xo, g.sw, e, g.pw, g.w, g.replicate) {
                                    Some(xi) => xrow[xi],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatters `col` back into `gx` (the adjoint of [`im2col`]).
fn col2im<T: Scalar>(g: &Geom, col: &[T], zo: usize, gx: &mut [T]) {
    let n = g.n();
    let plane = g.h * g.w;
    let mut row = 0;
    for c in 0..g.c {
        for a in 0..g.kd {
            let zi = src(zo, g.sd, a, g.pd, g.d, g.replicate);
            for b in 0..g.kh {
                for e in 0..g.kw {
                    let srcrow = &col[row * n..(row + 1) * n];
                    row += 1;
                    let Some(zi) = zi else { continue };
                    let base = (c * g.d + zi) * plane;
                    for yo in 0..g.oh {
                        let Some(yi) = src(yo, g.sh, b, g.ph, g.h, g.replicate) else { continue };
                        let line = &srcrow[yo * g.ow..(yo + 1) * g.ow];
                        let xrow = &mut gx[base + yi * g.w..base + (yi + 1) * g.w];
                        for (xo, &v) in line.iter().enumerate() {
                            if let Some(xi) = src(xo, g.sw, e, g.pw, g.w, g.replicate) {
                                xrow[xi] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Padded geometry for the stride-1 path: the output is computed on the
/// padded plane layout so every kernel tap becomes one GEMM over a shifted
/// view of the padded input.
struct Padded {
    dp: usize,
    hp: usize,
    wp: usize,
    nq: usize,
}

impl Padded {
    fn new(g: &Geom) -> Self {
        let (dp, hp, wp) = (g.d + 2 * g.pd, g.h + 2 * g.ph, g.w + 2 * g.pw);
        let nq = (g.od - 1) * hp * wp + (g.oh - 1) * wp + g.ow;
        Padded { dp, hp, wp, nq }
    }

    fn plane(&self) -> usize {
        self.hp * self.wp
    }

    fn vol(&self) -> usize {
        self.dp * self.plane()
    }

    fn offset(&self, a: usize, b: usize, e: usize) -> usize {
        a * self.plane() + b * self.wp + e
    }

    /// Index in the unpadded axis for padded index `i`, if it maps to one.
    fn unpad(i: usize, p: usize, n: usize, replicate: bool) -> Option<usize> {
        let j = i as isize - p as isize;
        if j >= 0 && (j as usize) < n {
            Some(j as usize)
        } else if replicate {
            Some(j.clamp(0, n as isize - 1) as usize)
        } else {
            None
        }
    }
}

fn pad_input<T: Scalar>(g: &Geom, pg: &Padded, x: &[T]) -> Vec<T> {
    let mut xp = vec![T::zero(); g.c * pg.vol()];
    for c in 0..g.c {
        for zp in 0..pg.dp {
            let Some(z) = Padded::unpad(zp, g.pd, g.d, g.replicate) else { continue };
            for yp in 0..pg.hp {
                let Some(y) = Padded::unpad(yp, g.ph, g.h, g.replicate) else { continue };
                let row = &x[((c * g.d + z) * g.h + y) * g.w..][..g.w];
                let dst = &mut xp[c * pg.vol() + zp * pg.plane() + yp * pg.wp..][..pg.wp];
                dst[g.pw..g.pw + g.w].copy_from_slice(row);
                if g.replicate {
                    dst[..g.pw].fill(row[0]);
                    dst[g.pw + g.w..].fill(row[g.w - 1]);
                }
            }
        }
    }
    xp
}

fn taps(g: &Geom) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
    (0..g.kd).flat_map(move |a| {
        (0..g.kh).flat_map(move |b| (0..g.kw).map(move |e| (((a * g.kh) + b) * g.kw + e, a, b, e)))
    })
}

fn forward_shifted<T: Scalar>(g: &Geom, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let pg = Padded::new(g);
    let xp = pad_input(g, &pg, x.data());
    let k3 = g.kd * g.kh * g.kw;
    let offsets: Vec<usize> = taps(g).map(|(_, a, bb, e)| pg.offset(a, bb, e)).collect();
    // [out][tap][in] weight order for the correlation kernel.
    let wd = w.data();
    let mut wk = Vec::with_capacity(wd.len());
    for o in 0..g.o {
        for t in 0..k3 {
            wk.extend((0..g.c).map(|c| wd[(o * g.c + c) * k3 + t]));
        }
    }
    let mut y = vec![T::zero(); g.o * pg.nq];
    let corr = kernel::Corr { w: &wk, outs: g.o, ins: g.c, offsets: &offsets, x_stride: pg.vol(), y_stride: pg.nq, n: pg.nq };
    kernel::correlate(&corr, &xp, &mut y);
    let mut out = Vec::with_capacity(g.o * g.od * g.oh * g.ow);
    for (o, &bias) in b.data().iter().enumerate() {
        for z in 0..g.od {
            for yy in 0..g.oh {
                let row = &y[o * pg.nq + z * pg.plane() + yy * pg.wp..][..g.ow];
                out.extend(row.iter().map(|&v| v + bias));
            }
        }
    }
    out
}

fn backward_shifted<T: Scalar>(
    g: &Geom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let pg = Padded::new(g);
    let k3 = g.kd * g.kh * g.kw;
    let offsets: Vec<usize> = taps(g).map(|(_, a, bb, e)| pg.offset(a, bb, e)).collect();
    let max_off = offsets.iter().copied().max().unwrap_or(0);
    // Output gradient on the padded layout, preceded by `max_off` zeros so
    // the adjoint correlation only uses non-negative offsets.
    let glen = pg.vol() + max_off;
    let go = gout.data();
    let mut gp = vec![T::zero(); g.o * glen];
    for o in 0..g.o {
        for z in 0..g.od {
            for yy in 0..g.oh {
                let src = &go[((o * g.od + z) * g.oh + yy) * g.ow..][..g.ow];
                gp[o * glen + max_off + z * pg.plane() + yy * pg.wp..][..g.ow].copy_from_slice(src);
            }
        }
    }
    let wd = w.data();
    let gw = need_w.then(|| {
        let xp = pad_input(g, &pg, x.data());
        let mut gw = vec![T::zero(); g.o * g.c * k3];
        let dots = kernel::TapDots { outs: g.o, ins: g.c, offsets: &offsets, g_stride: glen, x_stride: pg.vol(), n: pg.nq };
        kernel::tap_dots(&dots, &gp[max_off..], &xp, &mut gw);
        gw
    });
    let gxp = need_x.then(|| {
        let mut wt = Vec::with_capacity(wd.len());
        for c in 0..g.c {
            for t in 0..k3 {
                wt.extend((0..g.o).map(|o| wd[(o * g.c + c) * k3 + t]));
            }
        }
        let back: Vec<usize> = offsets.iter().map(|&off| max_off - off).collect();
        let mut gxp = vec![T::zero(); g.c * pg.vol()];
        let corr = kernel::Corr { w: &wt, outs: g.c, ins: g.o, offsets: &back, x_stride: glen, y_stride: pg.vol(), n: pg.vol() };
        kernel::correlate(&corr, &gp, &mut gxp);
        gxp
    });
    let gx = gxp.map(|gxp| {
        let mut gx = vec![T::zero(); x.numel()];
        for c in 0..g.c {
            for zp in 0..pg.dp {
                let Some(z) = Padded::unpad(zp, g.pd, g.d, g.replicate) else { continue };
                for yp in 0..pg.hp {
                    let Some(y) = Padded::unpad(yp, g.ph, g.h, g.replicate) else { continue };
                    let src = &gxp[c * pg.vol() + zp * pg.plane() + yp * pg.wp..][..pg.wp];
                    let dst = &mut gx[((c * g.d + z) * g.h + y) * g.w..][..g.w];
                    for (d, &v) in dst.iter_mut().zip(&src[g.pw..g.pw + g.w]) {
                        *d += v;
                    }
                    if g.replicate {
                        dst[0] += src[..g.pw].iter().copied().sum::<T>();
                        dst[g.w - 1] += src[g.pw + g.w..].iter().copied().sum::<T>();
                    }
                }
            }
        }
        gx
    });
    (gx, gw)
}

fn forward<T: Scalar>(g: &Geom, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    if g.sd == 1 && g.sh == 1 && g.sw == 1 {
        return forward_shifted(g, x, w, b);
    }
    let (k, n) = (g.k(), g.n());
    let slab = g.od * n;
    let mut out = vec![T::zero(); g.o * slab];
    for (o, &bias) in b.data().iter().enumerate() {
        out[o * slab..(o + 1) * slab].fill(bias);
    }
    let mut col = vec![T::zero(); k * n];
    for zo in 0..g.od {
        im2col(g, x.data(), zo, &mut col);
        T::gemm(
            g.o,
            k,
            n,
            T::one(),
            w.data(),
            (k as isize, 1),
            &col,
            (n as isize, 1),
            T::one(),
            &mut out[zo * n..],
            (slab as isize, 1),
        );
    }
    out
}

fn backward<T: Scalar>(
    g: &Geom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    needs: &[bool],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (k, n) = (g.k(), g.n());
    let slab = g.od * n;
    let go = gout.data();
    let need_x = needs.first().copied().unwrap_or(false);
    let need_w = needs.get(1).copied().unwrap_or(false);
    let need_b = needs.get(2).copied().unwrap_or(false);

    let gb = need_b.then(|| (0..g.o).map(|o| go[o * slab..(o + 1) * slab].iter().copied().sum()).collect());
    let mut gw = need_w.then(|| vec![T::zero(); g.o * k]);
    let mut gx = need_x.then(|| vec![T::zero(); x.numel()]);
    if !need_x && !need_w {
        return (gx, gw, gb);
    }
    if g.sd == 1 && g.sh == 1 && g.sw == 1 {
        let (gx, gw) = backward_shifted(g, x, w, gout, need_x, need_w);
        return (gx, gw, gb);
    }
    let mut col = vec![T::zero(); k * n];
    for zo in 0..g.od {
        let gslice = &go[zo * n..];
        if let Some(gw) = gw.as_mut() {
            im2col(g, x.data(), zo, &mut col);
            // gw[O,K] += G[O,N] * col^T
            T::gemm(g.o, n, k, T::one(), gslice, (slab as isize, 1), &col, (1, n as isize), T::one(), gw, (k as isize, 1));
        }
        if let Some(gx) = gx.as_mut() {
            // col[K,N] = W^T[K,O] * G[O,N]
            T::gemm(k, g.o, n, T::one(), w.data(), (1, k as isize), gslice, (slab as isize, 1), T::zero(), &mut col, (n as isize, 1));
            col2im(g, &col, zo, gx);
        }
    }
    (gx, gw, gb)
}

fn out_shape(g: &Geom, depth: bool) -> Vec<usize> {
    if depth {
        vec![g.o, g.od, g.oh, g.ow]
    } else {
        vec![g.o, g.oh, g.ow]
    }
}

pub(super) fn forward3d<T: Scalar>(a: &ConvAttrs, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geom3d("conv3d", a, x, w, b, true)?;
    Tensor::from_vec(&out_shape(&g, true), forward(&g, x, w, b))
}

pub(super) fn forward2d<T: Scalar>(a: &ConvAttrs, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geom3d("conv2d", a, x, w, b, false)?;
    Tensor::from_vec(&out_shape(&g, false), forward(&g, x, w, b))
}

fn pack<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    parts: (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>),
) -> Vec<Option<Tensor<T>>> {
    let (gx, gw, gb) = parts;
    let o = w.shape()[0];
    vec![
        gx.map(|d| Tensor::from_vec(x.shape(), d).expect("conv grad x")),
        gw.map(|d| Tensor::from_vec(w.shape(), d).expect("conv grad w")),
        gb.map(|d| Tensor::from_vec(&[o], d).expect("conv grad b")),
    ]
}

pub(super) fn backward3d<T: Scalar>(
    a: &ConvAttrs,
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let b = Tensor::zeros(&[w.shape()[0]]);
    let g = geom3d("conv3d", a, x, w, &b, true).expect("validated in forward");
    pack(x, w, backward(&g, x, w, gout, needs))
}

pub(super) fn backward2d<T: Scalar>(
    a: &ConvAttrs,
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let b = Tensor::zeros(&[w.shape()[0]]);
    let g = geom3d("conv2d", a, x, w, &b, false).expect("validated in forward");
    pack(x, w, backward(&g, x, w, gout, needs))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as a reference.
    fn reference(a: &ConvAttrs, x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let g = geom3d("conv3d", a, x, w, b, true).unwrap();
        let mut out = Tensor::zeros(&[g.o, g.od, g.oh, g.ow]);
        let (xd, wd) = (x.data(), w.data());
        for o in 0..g.o {
            for zo in 0..g.od {
                for yo in 0..g.oh {
                    for xo in 0..g.ow {
                        let mut acc = b.data()[o];
                        for c in 0..g.c {
                            for kz in 0..g.kd {
                                for ky in 0..g.kh {
                                    for kx in 0..g.kw {
                                        let (Some(zi), Some(yi), Some(xi)) = (
                                            src(zo, g.sd, kz, g.pd, g.d, g.replicate),
                                            src(yo, g.sh, ky, g.ph, g.h, g.replicate),
                                            src(xo, g.sw, kx, g.pw, g.w, g.replicate),
                                        ) else {
                                            continue;
                                        };
                                        acc += wd[(((o * g.c + c) * g.kd + kz) * g.kh + ky) * g.kw + kx]
                                            * xd[((c * g.d + zi) * g.h + yi) * g.w + xi];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((o * g.od + zo) * g.oh + yo) * g.ow + xo] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * seed).sin())
    }

    #[test]
    fn matches_reference_for_paddings_and_strides() {
        let x = seq(&[2, 5, 6, 7], 0.31);
        let w = seq(&[3, 2, 3, 3, 3], 0.77);
        let b = seq(&[3], 1.3);
        for attrs in [
            ConvAttrs::same(3, PadMode::Zero),
            ConvAttrs::same(3, PadMode::Replicate),
            ConvAttrs { stride: 2, padding: 1, pad_mode: PadMode::Zero },
            ConvAttrs { stride: 2, padding: 0, pad_mode: PadMode::Zero },
        ] {
            let got = forward3d(&attrs, &x, &w, &b).unwrap();
            let want = reference(&attrs, &x, &w, &b);
            assert_eq!(got.shape(), want.shape());
            for (p, q) in got.data().iter().zip(want.data()) {
                assert!((p - q).abs() < 1e-12, "{attrs:?}: {p} vs {q}");
            }
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum()
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // Without bias the conv is bilinear, so <y, g> = <x, gx> = <w, gw>.
        let x = seq(&[2, 4, 5, 6], 0.23);
        let w = seq(&[3, 2, 3, 3, 3], 0.61);
        let b = Tensor::zeros(&[3]);
        for attrs in [
            ConvAttrs::same(3, PadMode::Zero),
            ConvAttrs::same(3, PadMode::Replicate),
            ConvAttrs { stride: 2, padding: 1, pad_mode: PadMode::Replicate },
        ] {
            let y = forward3d(&attrs, &x, &w, &b).unwrap();
            let gy = seq(y.shape(), 0.97);
            let grads = backward3d(&attrs, &x, &w, &gy, &[true, true, true]);
            let lhs = dot(y.data(), gy.data());
            let gx = grads[0].as_ref().unwrap();
            let gw = grads[1].as_ref().unwrap();
            assert!((lhs - dot(x.data(), gx.data())).abs() < 1e-10, "{attrs:?}");
            assert!((lhs - dot(w.data(), gw.data())).abs() < 1e-10, "{attrs:?}");
            let gb = grads[2].as_ref().unwrap();
            let per = y.numel() / 3;
            for o in 0..3 {
                let want: f64 = gy.data()[o * per..(o + 1) * per].iter().sum();
                assert!((gb.data()[o] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_naming_dimension() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        let b = Tensor::<f64>::zeros(&[1]);
        let err = forward2d(&ConvAttrs::same(3, PadMode::Zero), &x, &w, &b).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn replicate_padding_keeps_constants_constant() {
        let x = Tensor::<f64>::full(&[1, 6, 6], 0.4);
        let w = seq(&[2, 1, 3, 3], 0.5);
        let b = Tensor::zeros(&[2]);
        let y = forward2d(&ConvAttrs::same(3, PadMode::Replicate), &x, &w, &b).unwrap();
        for o in 0..2 {
            let plane = &y.data()[o * 36..(o + 1) * 36];
            assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-15));
        }
    }
}
