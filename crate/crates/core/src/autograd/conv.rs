//! Convolution kernels via im2col + GEMM. Inputs are assumed already padded.

use ndarray::{Array2, Array3, Array4, ArrayView3, ArrayView4, Axis};

fn out_len(n: usize, k: usize, stride: usize) -> usize {
    assert!(n >= k, "input extent {n} smaller than kernel {k}");
    (n - k) / stride + 1
}

/// Unfolds `k×k` windows of a `C×H×W` input into columns of a
/// `(C·k·k) × (Ho·Wo)` matrix.
pub fn im2col(x: ArrayView3<f64>, k: usize, stride: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (out_len(h, k, stride), out_len(w, k, stride));
    let x = x.as_standard_layout();
    let src = x.as_slice().unwrap();
    let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
    let dst = cols.as_slice_mut().unwrap();
    let ncol = ho * wo;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let out = &mut dst[row * ncol..(row + 1) * ncol];
                for oy in 0..ho {
                    let base = ch * h * w + (oy * stride + ki) * w + kj;
                    let orow = &mut out[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        orow.copy_from_slice(&src[base..base + wo]);
                    } else {
                        for (ox, o) in orow.iter_mut().enumerate() {
                            *o = src[base + ox * stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto a `C×H×W` grid, summing overlaps.
pub fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, k: usize, stride: usize) -> Array3<f64> {
    let (ho, wo) = (out_len(h, k, stride), out_len(w, k, stride));
    let ncol = ho * wo;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().unwrap();
    let mut out = Array3::<f64>::zeros((c, h, w));
    let dst = out.as_slice_mut().unwrap();
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let col = &src[row * ncol..(row + 1) * ncol];
                for oy in 0..ho {
                    let base = ch * h * w + (oy * stride + ki) * w + kj;
                    let crow = &col[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        for (d, s) in dst[base..base + wo].iter_mut().zip(crow) {
                            *d += s;
                        }
                    } else {
                        for (ox, s) in crow.iter().enumerate() {
                            dst[base + ox * stride] += s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn weight_matrix(w: ArrayView4<f64>) -> Array2<f64> {
    let (o, c, k, _) = w.dim();
    w.as_standard_layout()
        .into_owned()
        .into_shape_with_order((o, c * k * k))
        .expect("contiguous weights")
}

/// Valid cross-correlation: `x` is `N×C×H×W`, `w` is `O×C×k×k`.
pub fn conv2d_forward(x: ArrayView4<f64>, w: ArrayView4<f64>, bias: Option<&[f64]>, stride: usize) -> Array4<f64> {
    let (n, c, h, wd) = x.dim();
    let (o, wc, k, _) = w.dim();
    assert_eq!(c, wc, "conv2d channel mismatch");
    let (ho, wo) = (out_len(h, k, stride), out_len(wd, k, stride));
    let wm = weight_matrix(w);
    let mut out = Array4::<f64>::zeros((n, o, ho, wo));
    for (i, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        let cols = im2col(x.index_axis(Axis(0), i), k, stride);
        let mut y = wm.dot(&cols);
        if let Some(b) = bias {
            for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(b) {
                row += bv;
            }
        }
        dst.assign(&y.into_shape_with_order((o, ho, wo)).unwrap());
    }
    out
}

/// Transposed convolution (adjoint of [`conv2d_forward`] without bias):
/// `x` is `N×Cin×H×W`, `w` is `Cin×Cout×k×k`; output is
/// `N×Cout×((H−1)s+k)×((W−1)s+k)`.
pub fn conv_transpose2d_forward(x: ArrayView4<f64>, w: ArrayView4<f64>, stride: usize) -> Array4<f64> {
    let (n, cin, h, wd) = x.dim();
    let (wcin, cout, k, _) = w.dim();
    assert_eq!(cin, wcin, "conv_transpose2d channel mismatch");
    let (oh, ow) = ((h - 1) * stride + k, (wd - 1) * stride + k);
    let wm = weight_matrix(w); // Cin × (Cout·k·k)
    let wt = wm.t();
    let mut out = Array4::<f64>::zeros((n, cout, oh, ow));
    for (i, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        let xi = x
            .index_axis(Axis(0), i)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cin, h * wd))
            .unwrap();
        let cols = wt.dot(&xi);
        dst.assign(&col2im(&cols, cout, oh, ow, k, stride));
    }
    out
}
