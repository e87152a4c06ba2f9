//! Forward and backward kernels for the spatial primitives.
//!
//! Convolutions go through an im2col buffer laid out `[rows, N*H*W]` so a
//! single GEMM covers the whole batch.

use super::tensor::{gemm, MatRef, Real, Tensor};
use crate::error::{Error, Result};

/// Same-padded stride-1 convolution with an odd square kernel.
/// Returns the output and the im2col buffer needed for backward.
pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let [n, ci, h, wd] = x.shape();
    let [co, wci, kh, kw] = w.shape();
    if wci != ci {
        return Err(Error::Shape(format!("conv2d expects {wci} input channels, got {ci}")));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!("conv2d needs an odd square kernel, got {kh}x{kw}")));
    }
    if b.len() != co {
        return Err(Error::Shape(format!("conv2d bias has {} entries for {co} channels", b.len())));
    }
    let k = kh;
    let hw = h * wd;
    let cols = im2col(x, k);
    let rows = ci * k * k;
    let mut out_mat = vec![T::zero(); co * n * hw];
    gemm(
        &mut out_mat,
        MatRef::row_major(w.data(), co, rows),
        MatRef::row_major(&cols, rows, n * hw),
        T::zero(),
    );
    let mut out = Tensor::zeros([n, co, h, wd]);
    let od = out.data_mut();
    let bias = b.data();
    for s in 0..n {
        for c in 0..co {
            let src = &out_mat[c * n * hw + s * hw..c * n * hw + (s + 1) * hw];
            let dst = &mut od[(s * co + c) * hw..(s * co + c + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + bias[c];
            }
        }
    }
    Ok((out, cols))
}

/// Gradients `(dx, dw, db)`; `dx` is skipped when not needed.
pub(crate) fn conv2d_backward<T: Real>(
    x_shape: [usize; 4],
    w: &Tensor<T>,
    cols: &[T],
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, ci, h, wd] = x_shape;
    let [co, _, k, _] = w.shape();
    let hw = h * wd;
    let rows = ci * k * k;
    let dmat = channel_major(dout);

    let mut dw = Tensor::zeros(w.shape());
    gemm(
        dw.data_mut(),
        MatRef::row_major(&dmat, co, n * hw),
        MatRef::row_major(cols, rows, n * hw).t(),
        T::zero(),
    );
    let mut db = Tensor::zeros([co, 1, 1, 1]);
    for (c, slot) in db.data_mut().iter_mut().enumerate() {
        *slot = dmat[c * n * hw..(c + 1) * n * hw].iter().copied().sum();
    }
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); rows * n * hw];
        gemm(
            &mut dcols,
            MatRef::row_major(w.data(), co, rows).t(),
            MatRef::row_major(&dmat, co, n * hw),
            T::zero(),
        );
        col2im(&dcols, x_shape, k)
    });
    (dx, dw, db)
}

fn im2col<T: Real>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let [n, ci, h, w] = x.shape();
    let hw = h * w;
    let pad = (k / 2) as isize;
    let ncols = n * hw;
    let mut cols = vec![T::zero(); ci * k * k * ncols];
    let xd = x.data();
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                // valid output x range for this horizontal offset
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for s in 0..n {
                    let src = &xd[(s * ci + c) * hw..(s * ci + c + 1) * hw];
                    let dst = &mut cols[row * ncols + s * hw..row * ncols + (s + 1) * hw];
                    for y in 0..h {
                        let yy = y as isize + dy;
                        if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let src_row = yy as usize * w;
                        let d = &mut dst[y * w + x_lo..y * w + x_hi];
                        let sx = (src_row as isize + x_lo as isize + dx) as usize;
                        d.copy_from_slice(&src[sx..sx + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], x_shape: [usize; 4], k: usize) -> Tensor<T> {
    let [n, ci, h, w] = x_shape;
    let hw = h * w;
    let pad = (k / 2) as isize;
    let ncols = n * hw;
    let mut dx = Tensor::zeros(x_shape);
    let dd = dx.data_mut();
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                let x_lo = (-ddx).max(0) as usize;
                let x_hi = (w as isize - ddx).min(w as isize).max(0) as usize;
                for s in 0..n {
                    let src = &cols[row * ncols + s * hw..row * ncols + (s + 1) * hw];
                    let dst = &mut dd[(s * ci + c) * hw..(s * ci + c + 1) * hw];
                    for y in 0..h {
                        let yy = y as isize + dy;
                        if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let base = (yy as usize * w) as isize + ddx;
                        for xx in x_lo..x_hi {
                            dst[(base + xx as isize) as usize] += src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `[N, C, H, W]` -> `[C, N*H*W]`
fn channel_major<T: Real>(t: &Tensor<T>) -> Vec<T> {
    let [n, c, h, w] = t.shape();
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    let d = t.data();
    for s in 0..n {
        for ch in 0..c {
            out[ch * n * hw + s * hw..ch * n * hw + (s + 1) * hw]
                .copy_from_slice(&d[(s * c + ch) * hw..(s * c + ch + 1) * hw]);
        }
    }
    out
}

/// `[C, N*H*W]` -> `[N, C, H, W]`
fn from_channel_major<T: Real>(m: &[T], shape: [usize; 4]) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let mut out = Tensor::zeros(shape);
    let d = out.data_mut();
    for s in 0..n {
        for ch in 0..c {
            d[(s * c + ch) * hw..(s * c + ch + 1) * hw]
                .copy_from_slice(&m[ch * n * hw + s * hw..ch * n * hw + (s + 1) * hw]);
        }
    }
    out
}

/// 2x2 stride-2 max pooling. Returns the output and, per output cell, the
/// flat input index of the first (row-major) maximum.
pub(crate) fn maxpool2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(out.len());
    let xd = x.data();
    let od = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best_idx = base + 2 * y * w + 2 * xx;
                let mut best = xd[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if xd[idx] > best {
                        best = xd[idx];
                        best_idx = idx;
                    }
                }
                od[o] = best;
                argmax.push(best_idx);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub(crate) fn maxpool2_backward<T: Real>(x_shape: [usize; 4], argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    let dd = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        dd[idx] += g;
    }
    dx
}

/// 2x2 stride-2 transposed convolution, weights `[C_in, C_out, 2, 2]`.
/// Returns the output and the channel-major input needed for backward.
pub(crate) fn upconv2_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let [n, ci, h, wd] = x.shape();
    let [wci, co, kh, kw] = w.shape();
    if wci != ci || kh != 2 || kw != 2 {
        return Err(Error::Shape(format!(
            "upconv2 weight {:?} does not match {ci} input channels",
            w.shape()
        )));
    }
    if b.len() != co {
        return Err(Error::Shape(format!("upconv2 bias has {} entries for {co} channels", b.len())));
    }
    let hw = h * wd;
    let xmat = channel_major(x);
    let mut ymat = vec![T::zero(); co * 4 * n * hw];
    gemm(
        &mut ymat,
        MatRef::row_major(w.data(), ci, co * 4).t(),
        MatRef::row_major(&xmat, ci, n * hw),
        T::zero(),
    );
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = Tensor::zeros([n, co, oh, ow]);
    let od = out.data_mut();
    let bias = b.data();
    for s in 0..n {
        for o in 0..co {
            let dst = &mut od[(s * co + o) * oh * ow..(s * co + o + 1) * oh * ow];
            for q in 0..4 {
                let (dy, dx) = (q / 2, q % 2);
                let src = &ymat[(o * 4 + q) * n * hw + s * hw..(o * 4 + q) * n * hw + (s + 1) * hw];
                for y in 0..h {
                    for xx in 0..wd {
                        dst[(2 * y + dy) * ow + 2 * xx + dx] = src[y * wd + xx] + bias[o];
                    }
                }
            }
        }
    }
    Ok((out, xmat))
}

pub(crate) fn upconv2_backward<T: Real>(
    x_shape: [usize; 4],
    w: &Tensor<T>,
    xmat: &[T],
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, ci, h, wd] = x_shape;
    let co = w.shape()[1];
    let hw = h * wd;
    let ow = 2 * wd;
    let mut dy = vec![T::zero(); co * 4 * n * hw];
    let dd = dout.data();
    for s in 0..n {
        for o in 0..co {
            let src = &dd[(s * co + o) * 4 * hw..(s * co + o + 1) * 4 * hw];
            for q in 0..4 {
                let (qy, qx) = (q / 2, q % 2);
                let dst = &mut dy[(o * 4 + q) * n * hw + s * hw..(o * 4 + q) * n * hw + (s + 1) * hw];
                for y in 0..h {
                    for xx in 0..wd {
                        dst[y * wd + xx] = src[(2 * y + qy) * ow + 2 * xx + qx];
                    }
                }
            }
        }
    }
    let mut dw = Tensor::zeros(w.shape());
    gemm(
        dw.data_mut(),
        MatRef::row_major(xmat, ci, n * hw),
        MatRef::row_major(&dy, co * 4, n * hw).t(),
        T::zero(),
    );
    let mut db = Tensor::zeros([co, 1, 1, 1]);
    for (o, slot) in db.data_mut().iter_mut().enumerate() {
        *slot = dy[o * 4 * n * hw..(o + 1) * 4 * n * hw].iter().copied().sum();
    }
    let dx = need_dx.then(|| {
        let mut dxm = vec![T::zero(); ci * n * hw];
        gemm(
            &mut dxm,
            MatRef::row_major(w.data(), ci, co * 4),
            MatRef::row_major(&dy, co * 4, n * hw),
            T::zero(),
        );
        from_channel_major(&dxm, x_shape)
    });
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col/GEMM.
    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [n, ci, h, wd] = x.shape();
        let [co, _, k, _] = w.shape();
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros([n, co, h, wd]);
        for s in 0..n {
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let yy = y as isize + ky as isize - p;
                                    let xq = xx as isize + kx as isize - p;
                                    if yy < 0 || xq < 0 || yy >= h as isize || xq >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((o * ci + c) * k + ky) * k + kx]
                                        * x.data()[((s * ci + c) * h + yy as usize) * wd + xq as usize];
                                }
                            }
                        }
                        out.data_mut()[((s * co + o) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: [usize; 4], scale: f64) -> Tensor<f64> {
        let n = shape.iter().product::<usize>();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * scale).collect()).unwrap()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for (shape, k) in [([2, 3, 4, 5], 3), ([1, 2, 3, 3], 1), ([3, 1, 2, 6], 5)] {
            let x = ramp(shape, 0.3);
            let w = ramp([4, shape[1], k, k], 0.1);
            let b = ramp([4, 1, 1, 1], 0.5);
            let (out, _) = conv2d_forward(&x, &w, &b).unwrap();
            let want = conv_naive(&x, &w, &b);
            for (a, e) in out.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_kernel_and_single_pixel() {
        let x = ramp([2, 1, 4, 4], 1.0);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let (out, _) = conv2d_forward(&x, &w, &Tensor::zeros([1, 1, 1, 1])).unwrap();
        assert_eq!(out, x);

        let x = Tensor::full([1, 2, 1, 1], 1.0);
        let w = ramp([1, 2, 3, 3], 1.0);
        let (out, _) = conv2d_forward(&x, &w, &Tensor::scalar(0.25)).unwrap();
        let center = w.data()[4] + w.data()[9 + 4];
        assert_eq!(out.data(), &[center + 0.25]);
        assert!(conv2d_forward(&Tensor::zeros([1, 3, 2, 2]), &w, &Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn pooling() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let (out, arg) = maxpool2_forward(&Tensor::full([1, 2, 4, 4], 7.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
        assert_eq!(out.shape(), [1, 2, 2, 2]);
        // ties go to the first row-major element of each window
        assert_eq!(arg[0], 0);
        assert!(maxpool2_forward(&Tensor::<f64>::zeros([1, 1, 3, 2])).is_err());
    }

    #[test]
    fn upconv_single_cell() {
        let x = Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
        let w = Tensor::from_vec([1, 1, 2, 2], vec![1.0, -1.0, 0.5, 3.0]).unwrap();
        let (out, _) = upconv2_forward(&x, &w, &Tensor::scalar(0.1)).unwrap();
        assert_eq!(out.shape(), [1, 1, 2, 2]);
        let want = [2.1f64, -1.9, 1.1, 6.1];
        for (a, e) in out.data().iter().zip(want) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(upconv2_forward(&Tensor::zeros([1, 2, 1, 1]), &w, &Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn upconv_is_linear() {
        let x = ramp([2, 3, 2, 3], 0.2);
        let w = ramp([3, 2, 2, 2], 0.3);
        let b = Tensor::zeros([2, 1, 1, 1]);
        let (y, _) = upconv2_forward(&x, &w, &b).unwrap();
        let (y3, _) = upconv2_forward(&x.map(|v| 3.0 * v), &w, &b).unwrap();
        for (a, e) in y3.data().iter().zip(y.data()) {
            assert!((a - 3.0 * e).abs() < 1e-12);
        }
    }
}
