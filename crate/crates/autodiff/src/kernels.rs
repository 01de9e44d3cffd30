//! Forward and backward kernels on raw slices.
//!
//! Every kernel is deterministic: loops run in a fixed order and no
//! reduction depends on thread scheduling.

use crate::tensor::Real;

pub(crate) fn sum_f64<T: Real>(x: &[T]) -> f64 {
    x.iter().map(|v| v.as_f64()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (w + 2 * pad - k) / stride + 1;
        Some(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out,
            w_out,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let hw = g.out_len();
    let mut cols = vec![T::zero(); g.patch_len() * hw];
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.w_out + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw = g.out_len();
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let hw = g.out_len();
    let plen = g.patch_len();
    let cols = im2col(x, g);
    let mut out = vec![T::zero(); g.c_out * hw];
    for (o, row) in out.chunks_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    T::gemm(g.c_out, plen, hw, weight, [plen as isize, 1], &cols, [hw as isize, 1], T::one(), &mut out, hw as isize);
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `want_dx` is false.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let hw = g.out_len();
    let plen = g.patch_len();
    let mut dw = None;
    let mut db = None;
    if want_dw {
        let cols = im2col(x, g);
        let mut dwv = vec![T::zero(); g.c_out * plen];
        T::gemm(g.c_out, hw, plen, dout, [hw as isize, 1], &cols, [1, hw as isize], T::zero(), &mut dwv, plen as isize);
        dw = Some(dwv);
        db = Some(dout.chunks(hw).map(|row| T::from_f64(sum_f64(row))).collect());
    }
    let dx = if want_dx {
        let mut dcols = vec![T::zero(); plen * hw];
        T::gemm(plen, g.c_out, hw, weight, [1, plen as isize], dout, [hw as isize, 1], T::zero(), &mut dcols, hw as isize);
        let mut dx = vec![T::zero(); g.c_in * g.h * g.w];
        col2im(&dcols, g, &mut dx);
        Some(dx)
    } else {
        None
    };
    (dx, dw, db)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub size: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl PoolGeom {
    pub fn new(c: usize, h: usize, w: usize, size: usize, stride: usize) -> Option<Self> {
        if size == 0 || stride == 0 || h < size || w < size {
            return None;
        }
        Some(Self {
            c,
            h,
            w,
            size,
            stride,
            h_out: (h - size) / stride + 1,
            w_out: (w - size) / stride + 1,
        })
    }
}

/// Index (into `x`) of the first maximum of every pooling window.
fn pool_argmax<T: Real>(x: &[T], g: &PoolGeom) -> Vec<usize> {
    let mut idx = Vec::with_capacity(g.c * g.h_out * g.w_out);
    for c in 0..g.c {
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let mut best = usize::MAX;
                let mut best_v = T::neg_infinity();
                for dy in 0..g.size {
                    for dx in 0..g.size {
                        let i = (c * g.h + oy * g.stride + dy) * g.w + ox * g.stride + dx;
                        if best == usize::MAX || x[i] > best_v {
                            best = i;
                            best_v = x[i];
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

pub(crate) fn maxpool_forward<T: Real>(x: &[T], g: &PoolGeom) -> Vec<T> {
    pool_argmax(x, g).into_iter().map(|i| x[i]).collect()
}

pub(crate) fn maxpool_backward<T: Real>(x: &[T], dout: &[T], g: &PoolGeom) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    for (o, i) in pool_argmax(x, g).into_iter().enumerate() {
        dx[i] = dx[i] + dout[o];
    }
    dx
}

/// `a [n, k] x b [k, m] -> [n, m]`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    T::gemm(n, k, m, a, [k as isize, 1], b, [m as isize, 1], T::zero(), &mut out, m as isize);
    out
}

/// Gradient of `a` for `a x b`: `dout [n, m] x b^T`.
pub(crate) fn matmul_grad_a<T: Real>(dout: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut da = vec![T::zero(); n * k];
    T::gemm(n, m, k, dout, [m as isize, 1], b, [1, m as isize], T::zero(), &mut da, k as isize);
    da
}

/// Gradient of `b` for `a x b`: `a^T x dout`.
pub(crate) fn matmul_grad_b<T: Real>(a: &[T], dout: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut db = vec![T::zero(); k * m];
    T::gemm(k, n, m, a, [1, k as isize], dout, [m as isize, 1], T::zero(), &mut db, m as isize);
    db
}

pub(crate) fn softmax_rows<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = 0.0f64;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += d.as_f64();
        }
        let inv = T::from_f64(1.0 / total);
        for d in dst.iter_mut() {
            *d = *d * inv;
        }
    }
    out
}

pub(crate) fn softmax_rows_backward<T: Real>(y: &[T], dy: &[T], cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, dyr), dxr) in y.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let inner: f64 = yr.iter().zip(dyr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        let inner = T::from_f64(inner);
        for ((d, &yv), &dyv) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (dyv - inner);
        }
    }
    dx
}

/// Weighted mean softmax cross-entropy; returns `(loss, per-row softmax)`.
pub(crate) fn cross_entropy<T: Real>(logits: &[T], cols: usize, labels: &[usize], weights: Option<&[f32]>) -> (f64, Vec<T>) {
    let probs = softmax_rows(logits, cols);
    let mut total = 0.0f64;
    let mut wsum = 0.0f64;
    for (r, row) in logits.chunks(cols).enumerate() {
        let w = weights.map_or(1.0, |w| w[r] as f64);
        if w == 0.0 {
            continue;
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += w * (lse - row[labels[r]].as_f64());
        wsum += w;
    }
    let loss = if wsum > 0.0 { total / wsum } else { 0.0 };
    (loss, probs)
}

pub(crate) fn cross_entropy_backward<T: Real>(
    probs: &[T],
    cols: usize,
    labels: &[usize],
    weights: Option<&[f32]>,
    upstream: f64,
) -> Vec<T> {
    let rows = probs.len() / cols;
    let wsum: f64 = match weights {
        Some(w) => w.iter().map(|&v| v as f64).sum(),
        None => rows as f64,
    };
    let mut dx = vec![T::zero(); probs.len()];
    if wsum == 0.0 {
        return dx;
    }
    for r in 0..rows {
        let w = weights.map_or(1.0, |w| w[r] as f64);
        if w == 0.0 {
            continue;
        }
        let scale = T::from_f64(upstream * w / wsum);
        for c in 0..cols {
            let mut g = probs[r * cols + c];
            if c == labels[r] {
                g = g - T::one();
            }
            dx[r * cols + c] = g * scale;
        }
    }
    dx
}

#[inline]
fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    let a = d.abs();
    if a < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (a - 0.5 * beta, d.signum())
    }
}

pub(crate) fn smooth_l1_forward<T: Real>(pred: &[T], cols: usize, targets: &[f32], weights: &[f32], beta: f64) -> f64 {
    let wsum: f64 = weights.iter().map(|&w| w as f64).sum();
    if wsum == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (r, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for c in 0..cols {
            let d = pred[r * cols + c].as_f64() - targets[r * cols + c] as f64;
            total += w as f64 * smooth_l1(d, beta).0;
        }
    }
    total / wsum
}

pub(crate) fn smooth_l1_backward<T: Real>(pred: &[T], cols: usize, targets: &[f32], weights: &[f32], beta: f64, upstream: f64) -> Vec<T> {
    let wsum: f64 = weights.iter().map(|&w| w as f64).sum();
    let mut dx = vec![T::zero(); pred.len()];
    if wsum == 0.0 {
        return dx;
    }
    for (r, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for c in 0..cols {
            let i = r * cols + c;
            let d = pred[i].as_f64() - targets[i] as f64;
            dx[i] = T::from_f64(upstream * w as f64 * smooth_l1(d, beta).1 / wsum);
        }
    }
    dx
}
