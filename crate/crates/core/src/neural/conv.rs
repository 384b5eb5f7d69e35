//! One-dimensional convolution kernels (im2col + GEMM, blocked over time).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

use super::Real;

/// Output columns per im2col block.
const BLOCK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

/// `cols[i*K + k, j] = x[i, (t0 + j)*stride + k - pad]`, zero outside.
fn im2col<T: Real>(shape: &ConvShape, x: ArrayView2<T>, t0: usize, cols: &mut Array2<T>, width: usize) {
    let tin = x.ncols() as isize;
    let (k_len, stride, pad) = (shape.kernel, shape.stride as isize, shape.pad() as isize);
    for i in 0..shape.in_ch {
        let src = x.row(i);
        let src = src.as_slice().expect("contiguous rows");
        for k in 0..k_len {
            let mut row = cols.row_mut(i * k_len + k);
            let dst = &mut row.as_slice_mut().expect("contiguous rows")[..width];
            let base = t0 as isize * stride + k as isize - pad;
            if stride == 1 {
                let lo = (-base).clamp(0, width as isize) as usize;
                let hi = (tin - base).clamp(0, width as isize) as usize;
                dst[..lo].fill(T::zero());
                if hi > lo {
                    let from = (base + lo as isize) as usize;
                    dst[lo..hi].copy_from_slice(&src[from..from + hi - lo]);
                }
                dst[hi.max(lo)..].fill(T::zero());
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    let p = base + j as isize * stride;
                    *d = if p >= 0 && p < tin { src[p as usize] } else { T::zero() };
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `dcols` into `dx`.
fn col2im<T: Real>(shape: &ConvShape, dcols: ArrayView2<T>, t0: usize, dx: &mut Array2<T>, width: usize) {
    let tin = dx.ncols() as isize;
    let (k_len, stride, pad) = (shape.kernel, shape.stride as isize, shape.pad() as isize);
    for i in 0..shape.in_ch {
        let mut dst = dx.row_mut(i);
        let dst = dst.as_slice_mut().expect("contiguous rows");
        for k in 0..k_len {
            let row = dcols.row(i * k_len + k);
            let base = t0 as isize * stride + k as isize - pad;
            for (j, &v) in row.iter().take(width).enumerate() {
                let p = base + j as isize * stride;
                if p >= 0 && p < tin {
                    dst[p as usize] += v;
                }
            }
        }
    }
}

/// `y[o, t] = b[o] + sum_{i,k} w[o, i*K + k] x[i, t*stride + k - pad]`.
pub(crate) fn forward<T: Real>(
    shape: &ConvShape,
    w: ArrayView2<T>,
    b: ArrayView1<T>,
    x: ArrayView2<T>,
) -> Array2<T> {
    let tout = x.ncols() / shape.stride;
    let mut y = Array2::<T>::zeros((shape.out_ch, tout));
    if shape.is_pointwise() {
        general_mat_mul(T::one(), &w, &x, T::zero(), &mut y);
    } else {
        let mut cols = Array2::<T>::zeros((shape.in_ch * shape.kernel, BLOCK.min(tout).max(1)));
        for t0 in (0..tout).step_by(BLOCK) {
            let width = BLOCK.min(tout - t0);
            im2col(shape, x, t0, &mut cols, width);
            general_mat_mul(
                T::one(),
                &w,
                &cols.slice(s![.., ..width]),
                T::zero(),
                &mut y.slice_mut(s![.., t0..t0 + width]),
            );
        }
    }
    for (mut row, &bias) in y.rows_mut().into_iter().zip(b.iter()) {
        row.mapv_inplace(|v| v + bias);
    }
    y
}

/// Accumulates weight and bias gradients for output gradient `dy` and
/// returns the input gradient when `need_dx` is set.
pub(crate) fn backward<T: Real>(
    shape: &ConvShape,
    w: ArrayView2<T>,
    x: ArrayView2<T>,
    dy: ArrayView2<T>,
    mut dw: ArrayViewMut2<T>,
    mut db: ArrayViewMut1<T>,
    need_dx: bool,
) -> Option<Array2<T>> {
    for (g, row) in db.iter_mut().zip(dy.rows()) {
        *g += row.iter().fold(T::zero(), |a, &v| a + v);
    }
    let tout = dy.ncols();
    if shape.is_pointwise() {
        general_mat_mul(T::one(), &dy, &x.t(), T::one(), &mut dw);
        return need_dx.then(|| w.t().dot(&dy));
    }
    let mut dx = need_dx.then(|| Array2::<T>::zeros(x.raw_dim()));
    let width_max = BLOCK.min(tout).max(1);
    let mut cols = Array2::<T>::zeros((shape.in_ch * shape.kernel, width_max));
    let mut dcols = Array2::<T>::zeros((shape.in_ch * shape.kernel, width_max));
    for t0 in (0..tout).step_by(BLOCK) {
        let width = BLOCK.min(tout - t0);
        im2col(shape, x, t0, &mut cols, width);
        let dy_blk = dy.slice(s![.., t0..t0 + width]);
        general_mat_mul(T::one(), &dy_blk, &cols.slice(s![.., ..width]).t(), T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let mut dc = dcols.slice_mut(s![.., ..width]);
            general_mat_mul(T::one(), &w.t(), &dy_blk, T::zero(), &mut dc);
            col2im(shape, dcols.view(), t0, dx, width);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array1};

    fn naive(shape: &ConvShape, w: &Array2<f64>, b: &Array1<f64>, x: &Array2<f64>) -> Array2<f64> {
        let tout = x.ncols() / shape.stride;
        let mut y = Array2::zeros((shape.out_ch, tout));
        for o in 0..shape.out_ch {
            for t in 0..tout {
                let mut acc = b[o];
                for i in 0..shape.in_ch {
                    for k in 0..shape.kernel {
                        let p = (t * shape.stride + k) as isize - shape.pad() as isize;
                        if p >= 0 && (p as usize) < x.ncols() {
                            acc += w[[o, i * shape.kernel + k]] * x[[i, p as usize]];
                        }
                    }
                }
                y[[o, t]] = acc;
            }
        }
        y
    }

    fn pseudo(n: usize, salt: f64) -> Vec<f64> {
        (0..n).map(|k| ((k as f64 + salt) * 0.7131).sin()).collect()
    }

    #[test]
    fn matches_naive_convolution() {
        for &(in_ch, out_ch, kernel, stride, t) in
            &[(1, 3, 5, 1, 12), (2, 3, 5, 2, 12), (3, 2, 1, 1, 7), (2, 2, 3, 2, 4100)]
        {
            let shape = ConvShape { in_ch, out_ch, kernel, stride };
            let w = Array2::from_shape_vec((out_ch, in_ch * kernel), pseudo(shape.weight_len(), 1.0)).unwrap();
            let b = Array1::from(pseudo(out_ch, 2.0));
            let x = Array2::from_shape_vec((in_ch, t), pseudo(in_ch * t, 3.0)).unwrap();
            let fast = forward(&shape, w.view(), b.view(), x.view());
            let slow = naive(&shape, &w, &b, &x);
            assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <dy, conv(x)> = <conv^T(dy), x> with zero bias
        let shape = ConvShape { in_ch: 2, out_ch: 3, kernel: 5, stride: 2 };
        let w = Array2::from_shape_vec((3, 10), pseudo(30, 0.5)).unwrap();
        let x = Array2::from_shape_vec((2, 16), pseudo(32, 1.5)).unwrap();
        let dy = Array2::from_shape_vec((3, 8), pseudo(24, 2.5)).unwrap();
        let y = forward(&shape, w.view(), Array1::zeros(3).view(), x.view());
        let mut dw = Array2::zeros((3, 10));
        let mut db = Array1::zeros(3);
        let dx = backward(&shape, w.view(), x.view(), dy.view(), dw.view_mut(), db.view_mut(), true).unwrap();
        let lhs: f64 = (&dy * &y).sum();
        let rhs: f64 = (&dx * &x).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // weight gradient of the same bilinear form is linear in w
        let rhs_w: f64 = (&dw * &w).sum();
        assert!((lhs - rhs_w).abs() < 1e-12);
        let expect = arr1(&[dy.row(0).sum(), dy.row(1).sum(), dy.row(2).sum()]);
        assert!(db.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn pointwise_path() {
        let shape = ConvShape { in_ch: 2, out_ch: 1, kernel: 1, stride: 1 };
        let w = arr2(&[[2.0, -1.0]]);
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let y = forward(&shape, w.view(), arr1(&[0.5]).view(), x.view());
        assert_eq!(y, arr2(&[[-0.5, 0.5]]));
    }
}
