//! Separable resampling: antialiased bicubic (the degradation operator `H`)
//! and bilinear upsampling, both as explicit sparse linear maps so that
//! their adjoints are exact transposes.

use ndarray::{Array2, Array3, ArrayView2};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax < 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

fn triangle(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

/// Reflects `j` into `[0, n)` with edge samples repeated (`-1 → 0`, `n → n-1`).
fn mirror(j: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = j.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn clamp_index(j: i64, n: usize) -> usize {
    j.clamp(0, n as i64 - 1) as usize
}

/// One axis of a separable resampler: for each output sample, the input
/// indices it reads and their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisResampler {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisResampler {
    fn build(
        in_len: usize,
        out_len: usize,
        factor: f64,
        kernel: fn(f64) -> f64,
        support: f64,
        antialias: bool,
        boundary: fn(i64, usize) -> usize,
    ) -> Self {
        let (scale, width) = if antialias && factor < 1.0 {
            (factor, support / factor)
        } else {
            (1.0, support)
        };
        let taps = (0..out_len)
            .map(|i| {
                let center = (i as f64 + 0.5) / factor - 0.5;
                let left = (center - width / 2.0).floor() as i64;
                let count = width.ceil() as i64 + 2;
                let mut raw: Vec<(i64, f64)> = (left..left + count)
                    .map(|j| (j, scale * kernel(scale * (center - j as f64))))
                    .filter(|&(_, w)| w != 0.0)
                    .collect();
                let total: f64 = raw.iter().map(|&(_, w)| w).sum();
                for t in raw.iter_mut() {
                    t.1 /= total;
                }
                // merge taps that land on the same input sample after boundary folding
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
                for (j, w) in raw {
                    let idx = boundary(j, in_len);
                    match merged.iter_mut().find(|(k, _)| *k == idx) {
                        Some(slot) => slot.1 += w,
                        None => merged.push((idx, w)),
                    }
                }
                merged
            })
            .collect();
        AxisResampler { in_len, taps }
    }

    pub fn bicubic(in_len: usize, out_len: usize, factor: f64) -> Self {
        Self::build(in_len, out_len, factor, cubic, 4.0, true, mirror)
    }

    pub fn bilinear(in_len: usize, out_len: usize, factor: f64) -> Self {
        Self::build(in_len, out_len, factor, triangle, 2.0, false, clamp_index)
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[Vec<(usize, f64)>] {
        &self.taps
    }
}

/// A separable 2-D resampler acting on every channel independently.
#[derive(Clone, Debug, PartialEq)]
pub struct Resampler2d {
    rows: AxisResampler,
    cols: AxisResampler,
}

fn out_dim(n: usize, factor: f64) -> Result<usize> {
    let m = (n as f64 * factor).round();
    if m < 1.0 {
        return Err(Error::invalid(format!(
            "resize of length {n} by {factor} yields an empty output"
        )));
    }
    Ok(m as usize)
}

fn check_factor(factor: f64) -> Result<()> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!("resize factor must be positive, got {factor}")));
    }
    Ok(())
}

impl Resampler2d {
    /// Antialiased bicubic resize of an `h×w` plane by `factor`.
    pub fn bicubic(h: usize, w: usize, factor: f64) -> Result<Self> {
        check_factor(factor)?;
        Ok(Resampler2d {
            rows: AxisResampler::bicubic(h, out_dim(h, factor)?, factor),
            cols: AxisResampler::bicubic(w, out_dim(w, factor)?, factor),
        })
    }

    /// Bilinear upsampling by an integer factor (half-pixel centers, edge clamp).
    pub fn bilinear(h: usize, w: usize, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("upsampling factor must be positive"));
        }
        let f = factor as f64;
        Ok(Resampler2d {
            rows: AxisResampler::bilinear(h, h * factor, f),
            cols: AxisResampler::bilinear(w, w * factor, f),
        })
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.rows.in_len(), self.cols.in_len())
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.out_len(), self.cols.out_len())
    }

    pub fn apply_plane(&self, src: ArrayView2<f64>) -> Array2<f64> {
        let (h, _) = src.dim();
        let ow = self.cols.out_len();
        let mut tmp = Array2::<f64>::zeros((h, ow));
        for y in 0..h {
            for (x, taps) in self.cols.taps.iter().enumerate() {
                tmp[[y, x]] = taps.iter().map(|&(j, w)| w * src[[y, j]]).sum();
            }
        }
        let oh = self.rows.out_len();
        let mut out = Array2::<f64>::zeros((oh, ow));
        for (y, taps) in self.rows.taps.iter().enumerate() {
            for &(j, w) in taps {
                for x in 0..ow {
                    out[[y, x]] += w * tmp[[j, x]];
                }
            }
        }
        out
    }

    /// Transpose of [`apply_plane`](Self::apply_plane): maps output-sized planes back to input size.
    pub fn adjoint_plane(&self, src: ArrayView2<f64>) -> Array2<f64> {
        let (ih, iw) = self.in_dims();
        let (oh, ow) = self.out_dims();
        let mut tmp = Array2::<f64>::zeros((ih, ow));
        for (y, taps) in self.rows.taps.iter().enumerate() {
            for &(j, w) in taps {
                for x in 0..ow {
                    tmp[[j, x]] += w * src[[y, x]];
                }
            }
        }
        let mut out = Array2::<f64>::zeros((ih, iw));
        for y in 0..ih {
            for (x, taps) in self.cols.taps.iter().enumerate() {
                let g = tmp[[y, x]];
                for &(j, w) in taps {
                    out[[y, j]] += w * g;
                }
            }
        }
        debug_assert_eq!(src.dim(), (oh, ow));
        out
    }

    fn map_channels(
        &self,
        src: &Array3<f64>,
        expect: (usize, usize),
        out: (usize, usize),
        f: impl Fn(ArrayView2<f64>) -> Array2<f64>,
    ) -> Result<Array3<f64>> {
        let (c, h, w) = src.dim();
        if (h, w) != expect {
            return Err(Error::shape(format!("resampler built for {expect:?}, got {h}x{w}")));
        }
        let mut dst = Array3::<f64>::zeros((c, out.0, out.1));
        for ch in 0..c {
            let plane = f(src.index_axis(ndarray::Axis(0), ch));
            dst.index_axis_mut(ndarray::Axis(0), ch).assign(&plane);
        }
        Ok(dst)
    }

    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self.map_channels(img.data(), self.in_dims(), self.out_dims(), |p| self.apply_plane(p))
            .map(ImageTensor::from_array_unchecked)
    }

    pub fn adjoint(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self.map_channels(img.data(), self.out_dims(), self.in_dims(), |p| self.adjoint_plane(p))
            .map(ImageTensor::from_array_unchecked)
    }
}

/// Antialiased bicubic resize; output dims are `round(dims × factor)`.
pub fn bicubic_resize(img: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    Resampler2d::bicubic(img.height(), img.width(), factor)?.apply(img)
}

/// Bilinear upsampling by an integer factor.
pub fn bilinear_upsample(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    Resampler2d::bilinear(img.height(), img.width(), factor)?.apply(img)
}
