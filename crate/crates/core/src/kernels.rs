//! Slice-level numeric kernels shared by forward and backward passes.

use crate::scalar::Real;

/// `a (m×k) · b (k×p)`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    }
    out
}

/// `a (m×p) · bᵀ` where `b` is `k×p`; result `m×k`.
pub(crate) fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, p: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for kk in 0..k {
            let brow = &b[kk * p..(kk + 1) * p];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            out[i * k + kk] = acc;
        }
    }
    out
}

/// `aᵀ · c` where `a` is `m×k` and `c` is `m×p`; result `k×p`, accumulated into `out`.
pub(crate) fn matmul_tn_acc<T: Real>(
    a: &[T],
    c: &[T],
    m: usize,
    k: usize,
    p: usize,
    out: &mut [T],
) {
    for i in 0..m {
        let crow = &c[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let orow = &mut out[kk * p..(kk + 1) * p];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o = *o + aik * cv;
            }
        }
    }
}

pub(crate) fn transpose<T: Real>(a: &[T], m: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        for j in 0..p {
            out[j * m + i] = a[i * p + j];
        }
    }
    out
}

pub(crate) fn softmax_rows<T: Real>(a: &[T], m: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        let row = &a[i * p..(i + 1) * p];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let orow = &mut out[i * p..(i + 1) * p];
        let mut total = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            total = total + *o;
        }
        for o in orow.iter_mut() {
            *o = *o / total;
        }
    }
    out
}

/// 3×3 cross-correlation, zero padding 1, stride 1. `w` is `3×3×cin×cout`.
pub(crate) fn conv3x3<T: Real>(
    f: &[T],
    w: &[T],
    h: usize,
    wd: usize,
    cin: usize,
    cout: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); h * wd * cout];
    for y in 0..h {
        for x in 0..wd {
            let orow = &mut out[(y * wd + x) * cout..(y * wd + x + 1) * cout];
            for dy in 0..3 {
                let sy = y + dy;
                if sy == 0 || sy > h {
                    continue;
                }
                let sy = sy - 1;
                for dx in 0..3 {
                    let sx = x + dx;
                    if sx == 0 || sx > wd {
                        continue;
                    }
                    let sx = sx - 1;
                    let src = &f[(sy * wd + sx) * cin..(sy * wd + sx + 1) * cin];
                    let wbase = (dy * 3 + dx) * cin * cout;
                    for (ci, &v) in src.iter().enumerate() {
                        let wrow = &w[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o = *o + v * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv3x3`] w.r.t. input and kernel, accumulated in place.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward<T: Real>(
    f: &[T],
    w: &[T],
    gout: &[T],
    h: usize,
    wd: usize,
    cin: usize,
    cout: usize,
    mut gf: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    for y in 0..h {
        for x in 0..wd {
            let grow = &gout[(y * wd + x) * cout..(y * wd + x + 1) * cout];
            for dy in 0..3 {
                let sy = y + dy;
                if sy == 0 || sy > h {
                    continue;
                }
                let sy = sy - 1;
                for dx in 0..3 {
                    let sx = x + dx;
                    if sx == 0 || sx > wd {
                        continue;
                    }
                    let sx = sx - 1;
                    let src_off = (sy * wd + sx) * cin;
                    let wbase = (dy * 3 + dx) * cin * cout;
                    for ci in 0..cin {
                        let woff = wbase + ci * cout;
                        if let Some(gf) = gf.as_deref_mut() {
                            let wrow = &w[woff..woff + cout];
                            let mut acc = T::zero();
                            for (&g, &wv) in grow.iter().zip(wrow) {
                                acc = acc + g * wv;
                            }
                            gf[src_off + ci] = gf[src_off + ci] + acc;
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            let v = f[src_off + ci];
                            for (o, &g) in gw[woff..woff + cout].iter_mut().zip(grow) {
                                *o = *o + v * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-axis sampling table for corner-aligned bilinear resampling:
/// `(lower index, upper index, upper weight)` for each output coordinate.
pub(crate) fn axis_taps<T: Real>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    (0..output)
        .map(|j| {
            let src = if output > 1 {
                T::from_count(j * (input - 1)) / T::from_count(output - 1)
            } else {
                T::zero()
            };
            let lo = src.floor().to_usize().unwrap_or(0).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - T::from_count(lo))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bilinear<T: Real>(
    a: &[T],
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    if oh == h && ow == w {
        return a.to_vec();
    }
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    let mut out = vec![T::zero(); oh * ow * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let gy = T::one() - fy;
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let gx = T::one() - fx;
            let base = (oy * ow + ox) * c;
            for ch in 0..c {
                let v00 = a[(y0 * w + x0) * c + ch];
                let v01 = a[(y0 * w + x1) * c + ch];
                let v10 = a[(y1 * w + x0) * c + ch];
                let v11 = a[(y1 * w + x1) * c + ch];
                out[base + ch] = gy * (gx * v00 + fx * v01) + fy * (gx * v10 + fx * v11);
            }
        }
    }
    out
}

/// Adjoint of [`bilinear`], accumulated into `ga`.
pub(crate) fn bilinear_backward<T: Real>(
    gout: &[T],
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    ga: &mut [T],
) {
    if oh == h && ow == w {
        for (g, &o) in ga.iter_mut().zip(gout) {
            *g = *g + o;
        }
        return;
    }
    let ty = axis_taps::<T>(h, oh);
    let tx = axis_taps::<T>(w, ow);
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let gy = T::one() - fy;
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let gx = T::one() - fx;
            let base = (oy * ow + ox) * c;
            for ch in 0..c {
                let g = gout[base + ch];
                let i00 = (y0 * w + x0) * c + ch;
                let i01 = (y0 * w + x1) * c + ch;
                let i10 = (y1 * w + x0) * c + ch;
                let i11 = (y1 * w + x1) * c + ch;
                ga[i00] = ga[i00] + g * gy * gx;
                ga[i01] = ga[i01] + g * gy * fx;
                ga[i10] = ga[i10] + g * fy * gx;
                ga[i11] = ga[i11] + g * fy * fx;
            }
        }
    }
}
