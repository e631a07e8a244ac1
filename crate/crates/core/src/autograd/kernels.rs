//! Raw forward/backward loops over `(batch, channels, length)` buffers.
//!
//! Everything here is single-threaded with a fixed accumulation order so that
//! results are bit-reproducible.

use crate::tensor::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_len: usize,
    pub out_ch: usize,
    pub out_len: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output positions `o` for which `o*stride + kk - pad` lands in `[0, in_len)`.
    #[inline]
    fn valid(&self, kk: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(s)
        };
        // largest o with o*s + kk - pad <= in_len - 1
        let top = self.in_len + self.pad;
        let hi = if top < kk + 1 {
            0
        } else {
            ((top - kk - 1) / s + 1).min(self.out_len)
        };
        (lo, hi.max(lo))
    }
}

const LANES: usize = 8;

/// `y += a * x`.
#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    acc.iter().fold(s, |t, &v| t + v)
}

fn fill_bias<T: Real>(y: &mut [T], b: Option<&[T]>, batch: usize, ch: usize, len: usize) {
    for bi in 0..batch {
        for c in 0..ch {
            let b0 = b.map_or(T::zero(), |b| b[c]);
            y[(bi * ch + c) * len..][..len].iter_mut().for_each(|v| *v = b0);
        }
    }
}

fn bias_grad<T: Real>(db: &mut [T], dy: &[T], batch: usize, ch: usize, len: usize) {
    for bi in 0..batch {
        for c in 0..ch {
            db[c] += dy[(bi * ch + c) * len..][..len].iter().copied().sum();
        }
    }
}

/// Input samples `x[o*stride + kk - pad]` for `o` in `lo..hi`; copied into
/// `buf` only when strided.
#[inline]
fn gather<'a, T: Real>(g: &ConvGeom, xrow: &'a [T], kk: usize, lo: usize, hi: usize, buf: &'a mut Vec<T>) -> &'a [T] {
    if g.stride == 1 {
        let off = lo + kk - g.pad;
        return &xrow[off..off + hi - lo];
    }
    buf.clear();
    buf.extend((lo..hi).map(|o| xrow[o * g.stride + kk - g.pad]));
    buf
}

pub(crate) fn conv1d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, y: &mut [T]) {
    let (il, ol, k) = (g.in_len, g.out_len, g.k);
    fill_bias(y, b, g.batch, g.out_ch, ol);
    let mut buf = Vec::with_capacity(ol);
    for bi in 0..g.batch {
        for ic in 0..g.in_ch {
            let xrow = &x[(bi * g.in_ch + ic) * il..][..il];
            for kk in 0..k {
                let (lo, hi) = g.valid(kk);
                if lo == hi {
                    continue;
                }
                let xs = gather(g, xrow, kk, lo, hi, &mut buf);
                for oc in 0..g.out_ch {
                    let wv = w[(oc * g.in_ch + ic) * k + kk];
                    axpy(&mut y[(bi * g.out_ch + oc) * ol..][lo..hi], wv, xs);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (il, ol, k) = (g.in_len, g.out_len, g.k);
    if let Some(db) = db {
        bias_grad(db, dy, g.batch, g.out_ch, ol);
    }
    let mut buf = Vec::with_capacity(ol);
    let mut acc = vec![T::zero(); ol];
    for bi in 0..g.batch {
        for ic in 0..g.in_ch {
            let xrow = &x[(bi * g.in_ch + ic) * il..][..il];
            for kk in 0..k {
                let (lo, hi) = g.valid(kk);
                if lo == hi {
                    continue;
                }
                if let Some(dw) = dw.as_deref_mut() {
                    let xs = gather(g, xrow, kk, lo, hi, &mut buf);
                    for oc in 0..g.out_ch {
                        let dyrow = &dy[(bi * g.out_ch + oc) * ol..][lo..hi];
                        dw[(oc * g.in_ch + ic) * k + kk] += dot(dyrow, xs);
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let t = &mut acc[..hi - lo];
                    t.iter_mut().for_each(|v| *v = T::zero());
                    for oc in 0..g.out_ch {
                        let wv = w[(oc * g.in_ch + ic) * k + kk];
                        axpy(t, wv, &dy[(bi * g.out_ch + oc) * ol..][lo..hi]);
                    }
                    let dxrow = &mut dx[(bi * g.in_ch + ic) * il..][..il];
                    for (o, &v) in (lo..hi).zip(t.iter()) {
                        dxrow[o * g.stride + kk - g.pad] += v;
                    }
                }
            }
        }
    }
}

/// Transposed convolution, kernel layout `(in_ch, out_ch, k)`, no padding.
pub(crate) fn conv_t_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, y: &mut [T]) {
    let (il, ol, k) = (g.in_len, g.out_len, g.k);
    fill_bias(y, b, g.batch, g.out_ch, ol);
    let mut t = vec![T::zero(); il];
    for bi in 0..g.batch {
        for oc in 0..g.out_ch {
            let yrow = &mut y[(bi * g.out_ch + oc) * ol..][..ol];
            for kk in 0..k {
                t.iter_mut().for_each(|v| *v = T::zero());
                for ic in 0..g.in_ch {
                    let wv = w[(ic * g.out_ch + oc) * k + kk];
                    axpy(&mut t, wv, &x[(bi * g.in_ch + ic) * il..][..il]);
                }
                for (i, &v) in t.iter().enumerate() {
                    yrow[i * g.stride + kk] += v;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (il, ol, k) = (g.in_len, g.out_len, g.k);
    if let Some(db) = db {
        bias_grad(db, dy, g.batch, g.out_ch, ol);
    }
    let mut gs = vec![T::zero(); il];
    for bi in 0..g.batch {
        for oc in 0..g.out_ch {
            let dyrow = &dy[(bi * g.out_ch + oc) * ol..][..ol];
            for kk in 0..k {
                for (i, v) in gs.iter_mut().enumerate() {
                    *v = dyrow[i * g.stride + kk];
                }
                for ic in 0..g.in_ch {
                    let widx = (ic * g.out_ch + oc) * k + kk;
                    if let Some(dx) = dx.as_deref_mut() {
                        axpy(&mut dx[(bi * g.in_ch + ic) * il..][..il], w[widx], &gs);
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += dot(&x[(bi * g.in_ch + ic) * il..][..il], &gs);
                    }
                }
            }
        }
    }
}

/// Source index and weight of the right neighbour for endpoint-aligned
/// linear interpolation from `in_len` to `out_len` samples.
#[inline]
pub(crate) fn interp_coord(j: usize, in_len: usize, out_len: usize) -> (usize, f64) {
    if in_len == 1 || out_len == 1 {
        return (0, 0.0);
    }
    let pos = j as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
    let i0 = (pos.floor() as usize).min(in_len - 2);
    (i0, pos - i0 as f64)
}

/// Bin `[start, end)` of adaptive average pooling.
#[inline]
pub(crate) fn pool_bin(i: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    (i * in_len / out_len, (i + 1) * in_len / out_len)
}
