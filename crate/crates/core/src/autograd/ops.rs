//! Differentiable operations recorded on a [`Tape`].

use std::rc::Rc;

use ndarray::{s, Array1, Array2, Array4, ArrayView4, Axis, Ix4, IxDyn, Zip};

use super::conv::{col2im, conv2d_forward, conv_transpose2d_forward, im2col};
use super::{scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::reflect_index;
use crate::imaging::resample::Resampler2d;

fn v4(t: &Tensor) -> ArrayView4<'_, f64> {
    t.view()
        .into_dimensionality::<Ix4>()
        .expect("expected a 4-d NCHW tensor")
}

fn dynamic(a: Array4<f64>) -> Tensor {
    a.into_dyn()
}

fn assert_same(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: operand shapes differ");
}

/// Mirror-pads the last two axes of an NCHW array by `p` (edge pixel not repeated).
pub(crate) fn reflect_pad4(x: ArrayView4<f64>, p: usize) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    assert!(p < h && p < w, "reflection pad {p} needs extent > {p}, got {h}x{w}");
    let rows: Vec<usize> = (0..h + 2 * p)
        .map(|i| reflect_index(i as isize - p as isize, h))
        .collect();
    let cols: Vec<usize> = (0..w + 2 * p)
        .map(|j| reflect_index(j as isize - p as isize, w))
        .collect();
    let mut out = Array4::<f64>::zeros((n, c, h + 2 * p, w + 2 * p));
    for ni in 0..n {
        for ci in 0..c {
            let src = x.slice(s![ni, ci, .., ..]);
            let mut dst = out.slice_mut(s![ni, ci, .., ..]);
            for (i, &si) in rows.iter().enumerate() {
                for (j, &sj) in cols.iter().enumerate() {
                    dst[[i, j]] = src[[si, sj]];
                }
            }
        }
    }
    out
}

/// Adjoint of [`reflect_pad4`]: folds the padded border back onto the interior.
pub(crate) fn reflect_fold4(x: ArrayView4<f64>, p: usize) -> Array4<f64> {
    let (n, c, hp, wp) = x.dim();
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    let rows: Vec<usize> = (0..hp).map(|i| reflect_index(i as isize - p as isize, h)).collect();
    let cols: Vec<usize> = (0..wp).map(|j| reflect_index(j as isize - p as isize, w)).collect();
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            let src = x.slice(s![ni, ci, .., ..]);
            let mut dst = out.slice_mut(s![ni, ci, .., ..]);
            for (i, &si) in rows.iter().enumerate() {
                for (j, &sj) in cols.iter().enumerate() {
                    dst[[si, sj]] += src[[i, j]];
                }
            }
        }
    }
    out
}

/// Result of a training-mode batch normalization.
pub struct BatchNormOut {
    pub y: Var,
    pub batch_mean: Array1<f64>,
    /// Unbiased per-channel variance, for running statistics.
    pub batch_var: Array1<f64>,
}

impl Tape {
    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let x = self.value(a);
        let y = x.mapv(&f);
        self.record(
            y,
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*x).for_each(|d, &xv| *d = df(xv, *d));
                vec![Some(d)]
            }),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_same(&x, &y, "add");
        self.record(
            &*x + &*y,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_same(&x, &y, "sub");
        self.record(&*x - &*y, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(-g)]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_same(&x, &y, "mul");
        let out = &*x * &*y;
        self.record(
            out,
            &[a, b],
            Box::new(move |g, need| vec![need[0].then(|| g * &*y), need[1].then(|| g * &*x)]),
        )
    }

    /// `mul · a + add`, elementwise.
    pub fn affine(&self, a: Var, mul: f64, add: f64) -> Var {
        let y = self.value(a).mapv(|v| mul * v + add);
        self.record(y, &[a], Box::new(move |g, _| vec![Some(g * mul)]))
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    /// Weighted sum `Σ wᵢ aᵢ` of same-shaped variables.
    pub fn weighted_sum(&self, terms: &[(f64, Var)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let first = self.value(terms[0].1);
        let mut out = Tensor::zeros(first.raw_dim());
        for &(w, v) in terms {
            let x = self.value(v);
            assert_same(&out, &x, "weighted_sum");
            out.scaled_add(w, &*x);
        }
        let ws: Vec<f64> = terms.iter().map(|t| t.0).collect();
        let vars: Vec<Var> = terms.iter().map(|t| t.1).collect();
        self.record(
            out,
            &vars,
            Box::new(move |g, _| ws.iter().map(|&w| Some(g * w)).collect()),
        )
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, f64::abs, |x, g| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, |x, g| {
            let s = sigmoid(x);
            g * s * (1.0 - s)
        })
    }

    /// `ln(max(a, floor))`; the gradient vanishes where the clamp is active.
    pub fn log_clamped(&self, a: Var, floor: f64) -> Var {
        self.unary(
            a,
            move |x| x.max(floor).ln(),
            move |x, g| if x > floor { g / x } else { 0.0 },
        )
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, g| if x >= 0.0 { g } else { slope * g },
        )
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            a,
            move |x| x.clamp(lo, hi),
            move |x, g| if x > lo && x < hi { g } else { 0.0 },
        )
    }

    /// Per-channel PReLU on an NCHW tensor with slopes of shape `[C]`.
    pub fn prelu(&self, a: Var, slopes: Var) -> Var {
        let x = self.value(a);
        let al = self.value(slopes);
        let x4 = v4(&x);
        assert_eq!(al.len(), x4.dim().1, "prelu slope count must equal channels");
        let al1: Vec<f64> = al.iter().copied().collect();
        let mut y = x4.to_owned();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            plane.mapv_inplace(|v| if v >= 0.0 { v } else { al1[c] * v });
        }
        let alshape = al.raw_dim();
        self.record(
            dynamic(y),
            &[a, slopes],
            Box::new(move |g, need| {
                let g4 = v4(g);
                let x4 = v4(&x);
                let mut dx = g4.to_owned();
                let mut dal = Tensor::zeros(alshape.clone());
                for c in 0..al1.len() {
                    let mut acc = 0.0;
                    Zip::from(dx.index_axis_mut(Axis(1), c))
                        .and(x4.index_axis(Axis(1), c))
                        .for_each(|d, &xv| {
                            if xv < 0.0 {
                                acc += *d * xv;
                                *d *= al1[c];
                            }
                        });
                    dal.as_slice_mut().unwrap()[c] = acc;
                }
                vec![need[0].then(|| dynamic(dx)), need[1].then_some(dal)]
            }),
        )
    }

    pub fn sum(&self, a: Var) -> Var {
        let x = self.value(a);
        let shape = x.raw_dim();
        self.record(
            scalar(x.sum()),
            &[a],
            Box::new(move |g, _| vec![Some(Tensor::from_elem(shape.clone(), g[[]]))]),
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `a · s` with `s` a scalar broadcast over `a`.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Var {
        let x = self.value(a);
        let sv = self.scalar_value(s);
        self.record(
            x.mapv(|v| v * sv),
            &[a, s],
            Box::new(move |g, need| vec![need[0].then(|| g * sv), need[1].then(|| scalar((g * &*x).sum()))]),
        )
    }

    /// `a − s` with `s` a scalar broadcast over `a`.
    pub fn sub_scalar(&self, a: Var, s: Var) -> Var {
        let x = self.value(a);
        let sv = self.scalar_value(s);
        self.record(
            x.mapv(|v| v - sv),
            &[a, s],
            Box::new(|g, _| vec![Some(g.clone()), Some(scalar(-g.sum()))]),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let x = self.value(a);
        let orig = x.shape().to_vec();
        let y = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| panic!("cannot reshape {orig:?} to {shape:?}"));
        self.record(
            y,
            &[a],
            Box::new(move |g, _| {
                vec![Some(
                    g.as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(IxDyn(&orig))
                        .unwrap(),
                )]
            }),
        )
    }

    pub fn reflect_pad(&self, a: Var, p: usize) -> Var {
        if p == 0 {
            return a;
        }
        let y = reflect_pad4(v4(&self.value(a)), p);
        self.record(
            dynamic(y),
            &[a],
            Box::new(move |g, _| vec![Some(dynamic(reflect_fold4(v4(g), p)))]),
        )
    }

    /// Transpose of [`reflect_pad`](Self::reflect_pad).
    pub fn reflect_fold(&self, a: Var, p: usize) -> Var {
        if p == 0 {
            return a;
        }
        let y = reflect_fold4(v4(&self.value(a)), p);
        self.record(
            dynamic(y),
            &[a],
            Box::new(move |g, _| vec![Some(dynamic(reflect_pad4(v4(g), p)))]),
        )
    }

    /// Spatial crop of an NCHW tensor.
    pub fn crop(&self, a: Var, top: usize, left: usize, h: usize, w: usize) -> Var {
        let x = self.value(a);
        let shape = x.raw_dim();
        let y = v4(&x).slice(s![.., .., top..top + h, left..left + w]).to_owned();
        self.record(
            dynamic(y),
            &[a],
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(shape.clone());
                d.view_mut()
                    .into_dimensionality::<Ix4>()
                    .unwrap()
                    .slice_mut(s![.., .., top..top + h, left..left + w])
                    .assign(&v4(g));
                vec![Some(d)]
            }),
        )
    }

    /// Valid cross-correlation with optional bias: `x` N×C×H×W, `w` O×C×k×k, `b` `[O]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = b.map(|b| self.value(b));
        let bias: Option<Vec<f64>> = bv.as_ref().map(|b| b.iter().copied().collect());
        let y = conv2d_forward(v4(&xv), v4(&wv), bias.as_deref(), stride);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.record(
            dynamic(y),
            &parents,
            Box::new(move |g, need| {
                let x4 = v4(&xv);
                let w4 = v4(&wv);
                let g4 = v4(g);
                let (n, c, h, wd) = x4.dim();
                let (o, _, k, _) = w4.dim();
                let (_, _, ho, wo) = g4.dim();
                let wm = w4
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((o, c * k * k))
                    .unwrap();
                let mut dx = need[0].then(|| Array4::<f64>::zeros((n, c, h, wd)));
                let mut dw = need[1].then(|| Array2::<f64>::zeros((o, c * k * k)));
                for i in 0..n {
                    let gi = g4
                        .index_axis(Axis(0), i)
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((o, ho * wo))
                        .unwrap();
                    if let Some(dw) = dw.as_mut() {
                        let cols = im2col(x4.index_axis(Axis(0), i), k, stride);
                        ndarray::linalg::general_mat_mul(1.0, &gi, &cols.t(), 1.0, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dcols = wm.t().dot(&gi);
                        dx.index_axis_mut(Axis(0), i)
                            .assign(&col2im(&dcols, c, h, wd, k, stride));
                    }
                }
                let mut out = vec![
                    dx.map(dynamic),
                    dw.map(|d| d.into_shape_with_order(IxDyn(&[o, c, k, k])).unwrap()),
                ];
                if need.len() > 2 {
                    out.push(need[2].then(|| g4.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)).into_dyn()));
                }
                out
            }),
        )
    }

    /// Transposed convolution: `x` N×Cin×H×W, `w` Cin×Cout×k×k.
    pub fn conv_transpose2d(&self, x: Var, w: Var, stride: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let y = conv_transpose2d_forward(v4(&xv), v4(&wv), stride);
        self.record(
            dynamic(y),
            &[x, w],
            Box::new(move |g, need| {
                let x4 = v4(&xv);
                let w4 = v4(&wv);
                let g4 = v4(g);
                let (n, cin, h, wd) = x4.dim();
                let (_, cout, k, _) = w4.dim();
                let dx = need[0].then(|| dynamic(conv2d_forward(g4, w4, None, stride)));
                let dw = need[1].then(|| {
                    let mut acc = Array2::<f64>::zeros((cin, cout * k * k));
                    for i in 0..n {
                        let xi = x4
                            .index_axis(Axis(0), i)
                            .as_standard_layout()
                            .into_owned()
                            .into_shape_with_order((cin, h * wd))
                            .unwrap();
                        let cols = im2col(g4.index_axis(Axis(0), i), k, stride);
                        ndarray::linalg::general_mat_mul(1.0, &xi, &cols.t(), 1.0, &mut acc);
                    }
                    acc.into_shape_with_order(IxDyn(&[cin, cout, k, k])).unwrap()
                });
                vec![dx, dw]
            }),
        )
    }

    /// Batch normalization with batch statistics over N, H, W.
    pub fn batch_norm_train(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> BatchNormOut {
        let xv = self.value(x);
        let x4 = v4(&xv);
        let (n, c, h, w) = x4.dim();
        let m = (n * h * w) as f64;
        let gam: Vec<f64> = self.value(gamma).iter().copied().collect();
        let bet: Vec<f64> = self.value(beta).iter().copied().collect();
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        let mut xhat = Array4::<f64>::zeros((n, c, h, w));
        let mut y = Array4::<f64>::zeros((n, c, h, w));
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let plane = x4.index_axis(Axis(1), ch);
            let mu = plane.sum() / m;
            let v = plane.fold(0.0, |a, &t| a + (t - mu) * (t - mu)) / m;
            mean[ch] = mu;
            var[ch] = if m > 1.0 { v * m / (m - 1.0) } else { v };
            inv_std[ch] = 1.0 / (v + eps).sqrt();
            Zip::from(xhat.index_axis_mut(Axis(1), ch))
                .and(y.index_axis_mut(Axis(1), ch))
                .and(plane)
                .for_each(|xh, yy, &t| {
                    *xh = (t - mu) * inv_std[ch];
                    *yy = gam[ch] * *xh + bet[ch];
                });
        }
        let out = self.record(
            dynamic(y),
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let g4 = v4(g);
                let mut dx = Array4::<f64>::zeros((n, c, h, w));
                let mut dg = Tensor::zeros(IxDyn(&[c]));
                let mut db = Tensor::zeros(IxDyn(&[c]));
                for ch in 0..c {
                    let gp = g4.index_axis(Axis(1), ch);
                    let xp = xhat.index_axis(Axis(1), ch);
                    let sg = gp.sum();
                    let sgx = Zip::from(gp).and(xp).fold(0.0, |a, &gv, &xv| a + gv * xv);
                    dg[[ch]] = sgx;
                    db[[ch]] = sg;
                    let k = gam[ch] * inv_std[ch] / m;
                    Zip::from(dx.index_axis_mut(Axis(1), ch))
                        .and(gp)
                        .and(xp)
                        .for_each(|d, &gv, &xv| *d = k * (m * gv - sg - xv * sgx));
                }
                vec![
                    need[0].then(|| dynamic(dx)),
                    need[1].then_some(dg),
                    need[2].then_some(db),
                ]
            }),
        );
        BatchNormOut {
            y: out,
            batch_mean: mean,
            batch_var: var,
        }
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Array1<f64>,
        var: &Array1<f64>,
        eps: f64,
    ) -> Var {
        let xv = self.value(x);
        let x4 = v4(&xv);
        let c = x4.dim().1;
        let gam: Vec<f64> = self.value(gamma).iter().copied().collect();
        let bet: Vec<f64> = self.value(beta).iter().copied().collect();
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mu = mean.to_vec();
        let mut y = x4.to_owned();
        for ch in 0..c {
            y.index_axis_mut(Axis(1), ch)
                .mapv_inplace(|t| gam[ch] * (t - mu[ch]) * inv[ch] + bet[ch]);
        }
        self.record(
            dynamic(y),
            &[x, gamma, beta],
            Box::new(move |g, need| {
                let g4 = v4(g);
                let x4 = v4(&xv);
                let mut dx = g4.to_owned();
                let mut dg = Tensor::zeros(IxDyn(&[c]));
                let mut db = Tensor::zeros(IxDyn(&[c]));
                for ch in 0..c {
                    dx.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * gam[ch] * inv[ch]);
                    db[[ch]] = g4.index_axis(Axis(1), ch).sum();
                    dg[[ch]] = Zip::from(g4.index_axis(Axis(1), ch))
                        .and(x4.index_axis(Axis(1), ch))
                        .fold(0.0, |a, &gv, &xv| a + gv * (xv - mu[ch]) * inv[ch]);
                }
                vec![
                    need[0].then(|| dynamic(dx)),
                    need[1].then_some(dg),
                    need[2].then_some(db),
                ]
            }),
        )
    }

    /// Dense layer: `x` N×D, `w` O×D, `b` `[O]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let x2 = xv
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("linear input must be N×D");
        let w2 = wv
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("linear weight must be O×D");
        let mut y = x2.dot(&w2.t());
        for mut row in y.rows_mut() {
            Zip::from(&mut row)
                .and(bv.view().into_dimensionality::<ndarray::Ix1>().unwrap())
                .for_each(|r, &b| *r += b);
        }
        self.record(
            y.into_dyn(),
            &[x, w, b],
            Box::new(move |g, need| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let x2 = xv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                vec![
                    need[0].then(|| g2.dot(&w2).into_dyn()),
                    need[1].then(|| g2.t().dot(&x2).into_dyn()),
                    need[2].then(|| g2.sum_axis(Axis(0)).into_dyn()),
                ]
            }),
        )
    }

    /// Applies a linear resampler to every plane of an NCHW tensor.
    pub fn resample(&self, x: Var, r: Rc<Resampler2d>) -> Var {
        let xv = self.value(x);
        let x4 = v4(&xv);
        let (n, c, _, _) = x4.dim();
        let (oh, ow) = r.out_dims();
        let (ih, iw) = r.in_dims();
        assert_eq!((x4.dim().2, x4.dim().3), (ih, iw), "resampler built for other dims");
        let mut y = Array4::<f64>::zeros((n, c, oh, ow));
        for i in 0..n {
            for ch in 0..c {
                y.slice_mut(s![i, ch, .., ..])
                    .assign(&r.apply_plane(x4.slice(s![i, ch, .., ..])));
            }
        }
        self.record(
            dynamic(y),
            &[x],
            Box::new(move |g, _| {
                let g4 = v4(g);
                let mut d = Array4::<f64>::zeros((n, c, ih, iw));
                for i in 0..n {
                    for ch in 0..c {
                        d.slice_mut(s![i, ch, .., ..])
                            .assign(&r.adjoint_plane(g4.slice(s![i, ch, .., ..])));
                    }
                }
                vec![Some(dynamic(d))]
            }),
        )
    }

    /// Per-kernel zero-mean, unit-Frobenius-norm reparametrization of a K×C×k×k array.
    pub fn normalize_filters(&self, w: Var) -> Result<Var> {
        let raw = self.value(w);
        let r4 = v4(&raw);
        let kn = r4.dim().0;
        let mut out = r4.to_owned();
        let mut norms = Vec::with_capacity(kn);
        for (k, mut ker) in out.outer_iter_mut().enumerate() {
            let mu = ker.mean().unwrap_or(0.0);
            ker.mapv_inplace(|v| v - mu);
            let nrm = ker.mapv(|v| v * v).sum().sqrt();
            if !(nrm > 1e-12) || !nrm.is_finite() {
                return Err(Error::invalid(format!(
                    "filter {k} is constant and cannot be normalized"
                )));
            }
            ker.mapv_inplace(|v| v / nrm);
            norms.push(nrm);
        }
        let normed = out.clone();
        Ok(self.record(
            dynamic(out),
            &[w],
            Box::new(move |g, _| {
                let g4 = v4(g);
                let mut d = Array4::<f64>::zeros(normed.raw_dim());
                for k in 0..norms.len() {
                    let o = normed.index_axis(Axis(0), k);
                    let gk = g4.index_axis(Axis(0), k);
                    let proj = Zip::from(o).and(gk).fold(0.0, |a, &ov, &gv| a + ov * gv);
                    let mut dk = d.index_axis_mut(Axis(0), k);
                    Zip::from(&mut dk)
                        .and(o)
                        .and(gk)
                        .for_each(|dv, &ov, &gv| *dv = (gv - ov * proj) / norms[k]);
                    let m = dk.mean().unwrap_or(0.0);
                    dk.mapv_inplace(|v| v - m);
                }
                vec![Some(dynamic(d))]
            }),
        ))
    }

    /// Per-sample projection of an NCHW residual onto the ball of radius
    /// `e^α · σₙ · √(C·H·W − 1)` around the origin.
    pub fn project_ball(&self, r: Var, alpha: Var, sigmas: &[f64]) -> Var {
        let rv = self.value(r);
        let r4 = v4(&rv);
        let (n, c, h, w) = r4.dim();
        assert_eq!(sigmas.len(), n, "one noise level per sample");
        let root = ((c * h * w) as f64 - 1.0).sqrt();
        let a = self.scalar_value(alpha);
        let eps: Vec<f64> = sigmas.iter().map(|&sg| a.exp() * sg * root).collect();
        let norms: Vec<f64> = r4.outer_iter().map(|p| p.mapv(|v| v * v).sum().sqrt()).collect();
        let mut y = r4.to_owned();
        let mut outside = vec![false; n];
        for i in 0..n {
            if norms[i] > eps[i] {
                outside[i] = true;
                let k = eps[i] / norms[i];
                y.index_axis_mut(Axis(0), i).mapv_inplace(|v| v * k);
            }
        }
        self.record(
            dynamic(y),
            &[r, alpha],
            Box::new(move |g, _| {
                let g4 = v4(g);
                let r4 = v4(&rv);
                let mut dr = g4.to_owned();
                let mut da = 0.0;
                for i in 0..n {
                    if !outside[i] {
                        continue;
                    }
                    let ri = r4.index_axis(Axis(0), i);
                    let gi = g4.index_axis(Axis(0), i);
                    let rg = Zip::from(ri).and(gi).fold(0.0, |acc, &rv, &gv| acc + rv * gv) / norms[i];
                    da += eps[i] * rg;
                    let k = eps[i] / norms[i];
                    Zip::from(dr.index_axis_mut(Axis(0), i))
                        .and(ri)
                        .and(gi)
                        .for_each(|d, &rv, &gv| *d = k * (gv - rv / norms[i] * rg));
                }
                vec![Some(dynamic(dr)), Some(scalar(da))]
            }),
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check;
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rnd(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>() - 0.5)
    }

    /// Contracts an op output with a fixed random tensor to get a scalar.
    fn probe(t: &Tape, v: Var, seed: u64) -> Var {
        let w = t.constant(rnd(&t.shape(v), seed));
        let p = t.mul(v, w);
        t.sum(p)
    }

    const TOL: f64 = 1e-6;

    #[test]
    fn elementwise_ops() {
        let ins = [rnd(&[2, 3], 1), rnd(&[2, 3], 2)];
        let err = check(&ins, 1e-6, |t, v| {
            let a = t.add(v[0], v[1]);
            let b = t.mul(a, v[0]);
            let c = t.sub(b, v[1]);
            let d = t.sigmoid(c);
            let e = t.affine(d, 2.0, 0.3);
            let f = t.log_clamped(e, 1e-12);
            let g = t.leaky_relu(f, 0.2);
            let h = t.weighted_sum(&[(0.5, g), (2.0, v[1])]);
            probe(t, h, 3)
        });
        assert!(err < TOL, "{err}");
        let ins = [rnd(&[7], 4)];
        let err = check(&ins, 1e-6, |t, v| {
            let a = t.abs(v[0]);
            let m = t.mean(v[0]);
            let b = t.sub_scalar(a, m);
            let b = t.mul_scalar(b, m);
            let c = t.clamp(b, -0.2, 0.2);
            let r = t.reshape(c, &[7, 1]);
            probe(t, r, 5)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn prelu_and_padding() {
        let ins = [rnd(&[2, 3, 4, 5], 6), rnd(&[3], 7)];
        let err = check(&ins, 1e-6, |t, v| {
            let a = t.prelu(v[0], v[1]);
            let p = t.reflect_pad(a, 2);
            let f = t.reflect_fold(p, 1);
            let c = t.crop(f, 1, 0, 3, 4);
            probe(t, c, 8)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn fold_is_adjoint_of_pad() {
        let x = rnd(&[1, 2, 5, 4], 9);
        let p = reflect_pad4(v4(&x), 2);
        let g = Array4::from_shape_fn(p.raw_dim(), |(a, b, c, d)| ((a + 3 * b + 5 * c + 7 * d) % 11) as f64);
        let lhs = (&p * &g).sum();
        let rhs = (&reflect_fold4(g.view(), 2) * &x.view().into_dimensionality::<Ix4>().unwrap()).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn convolutions() {
        for stride in [1, 2] {
            let ins = [rnd(&[2, 2, 6, 5], 10), rnd(&[3, 2, 3, 3], 11), rnd(&[3], 12)];
            let err = check(&ins, 1e-6, |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride);
                probe(t, y, 13)
            });
            assert!(err < TOL, "conv stride {stride}: {err}");
            let ins = [rnd(&[2, 3, 3, 4], 14), rnd(&[3, 2, 4, 4], 15)];
            let err = check(&ins, 1e-6, |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], stride);
                probe(t, y, 16)
            });
            assert!(err < TOL, "conv_transpose stride {stride}: {err}");
        }
    }

    #[test]
    fn batch_norm_and_linear() {
        let ins = [rnd(&[3, 2, 3, 3], 17), rnd(&[2], 18), rnd(&[2], 19)];
        let err = check(&ins, 1e-6, |t, v| {
            let bn = t.batch_norm_train(v[0], v[1], v[2], 1e-5);
            probe(t, bn.y, 20)
        });
        assert!(err < 1e-5, "{err}");
        let mean = Array1::from(vec![0.1, -0.2]);
        let var = Array1::from(vec![0.5, 2.0]);
        let err = check(&ins, 1e-6, |t, v| {
            let y = t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5);
            probe(t, y, 21)
        });
        assert!(err < TOL, "{err}");
        let ins = [rnd(&[3, 4], 22), rnd(&[2, 4], 23), rnd(&[2], 24)];
        let err = check(&ins, 1e-6, |t, v| {
            let y = t.linear(v[0], v[1], v[2]);
            probe(t, y, 25)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn batch_norm_output_is_standardized() {
        let t = Tape::new();
        let x = t.param(rnd(&[4, 2, 3, 3], 26));
        let bn = t.batch_norm_train(
            x,
            t.constant(Tensor::ones(IxDyn(&[2]))),
            t.constant(Tensor::zeros(IxDyn(&[2]))),
            0.0,
        );
        let y = t.value(bn.y);
        for ch in 0..2 {
            let p = y.index_axis(Axis(1), ch);
            assert!(p.mean().unwrap().abs() < 1e-12);
            assert!((p.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn resample_op() {
        let r = Rc::new(Resampler2d::bicubic(6, 6, 0.5).unwrap());
        let ins = [rnd(&[1, 2, 6, 6], 27)];
        let err = check(&ins, 1e-6, |t, v| {
            let y = t.resample(v[0], Rc::clone(&r));
            probe(t, y, 28)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn filter_normalization() {
        let ins = [rnd(&[3, 2, 3, 3], 29)];
        let err = check(&ins, 1e-6, |t, v| {
            let y = t.normalize_filters(v[0]).unwrap();
            probe(t, y, 30)
        });
        assert!(err < TOL, "{err}");
        let t = Tape::new();
        let y = t.normalize_filters(t.param(ins[0].clone())).unwrap();
        for k in t.value(y).outer_iter() {
            assert!(k.mean().unwrap().abs() < 1e-15);
            assert!((k.mapv(|v| v * v).sum() - 1.0).abs() < 1e-14);
        }
        let t = Tape::new();
        assert!(t
            .normalize_filters(t.param(Tensor::ones(IxDyn(&[1, 1, 3, 3]))))
            .is_err());
    }

    #[test]
    fn ball_projection() {
        // sample 0 outside, sample 1 inside the ball
        let mut r = rnd(&[2, 1, 3, 3], 31);
        r.slice_mut(s![1, .., .., ..]).mapv_inplace(|v| v * 1e-3);
        let ins = [r, scalar(0.3)];
        let sig = [0.05, 0.05];
        let err = check(&ins, 1e-6, |t, v| {
            let y = t.project_ball(v[0], v[1], &sig);
            probe(t, y, 32)
        });
        assert!(err < TOL, "{err}");
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }
}
