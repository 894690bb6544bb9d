use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

const MEAN_TOL: f64 = 1e-8;
const NORM_TOL: f64 = 1e-8;

/// `K` convolution kernels of shape `C×k×k`, each zero-mean with unit
/// Frobenius norm.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    kernels: Array4<f64>,
}

impl FilterBank {
    /// Wraps kernels that already satisfy the constraints.
    pub fn new(kernels: Array4<f64>) -> Result<Self> {
        let (k, c, kh, kw) = kernels.dim();
        if k == 0 || c == 0 || kh == 0 || kh != kw || kh % 2 == 0 {
            return Err(Error::shape(format!(
                "filter bank must be K×C×k×k with odd k, got {:?}",
                kernels.dim()
            )));
        }
        for (i, ker) in kernels.outer_iter().enumerate() {
            let mean = ker.mean().unwrap_or(0.0);
            let norm = ker.iter().map(|v| v * v).sum::<f64>().sqrt();
            if mean.abs() > MEAN_TOL || (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::invalid(format!(
                    "kernel {i} violates constraints (mean {mean:e}, norm {norm})"
                )));
            }
        }
        Ok(FilterBank { kernels })
    }

    /// Centers and normalizes each kernel of `raw`.
    pub fn normalized(raw: &Array4<f64>) -> Result<Self> {
        let mut kernels = raw.clone();
        for (i, mut ker) in kernels.outer_iter_mut().enumerate() {
            let mean = ker.mean().unwrap_or(0.0);
            ker.mapv_inplace(|v| v - mean);
            let norm = ker.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= f64::EPSILON * ker.len() as f64 {
                return Err(Error::invalid(format!(
                    "kernel {i} is constant and cannot be normalized"
                )));
            }
            ker.mapv_inplace(|v| v / norm);
        }
        FilterBank::new(kernels)
    }

    /// Horizontal and vertical forward differences of every channel
    /// (`2C` kernels of size 3), a smoothness prior needing no training.
    pub fn finite_differences(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("need at least one channel"));
        }
        let mut k = Array4::zeros((2 * channels, channels, 3, 3));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for c in 0..channels {
            k[[2 * c, c, 1, 1]] = -h;
            k[[2 * c, c, 1, 2]] = h;
            k[[2 * c + 1, c, 1, 1]] = -h;
            k[[2 * c + 1, c, 2, 1]] = h;
        }
        FilterBank::new(k)
    }

    pub fn kernels(&self) -> &Array4<f64> {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dim().1
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.dim().2
    }
}

fn reflect(i: isize, n: usize) -> usize {
    crate::imaging::reflect_index(i, n)
}

/// `(L_k X)` for every kernel: reflection-padded cross-correlation producing
/// `K×H×W` feature maps.
pub fn apply_filter_bank(bank: &FilterBank, img: &ImageTensor) -> Result<Array3<f64>> {
    let (c, h, w) = img.dim();
    if c != bank.in_channels() {
        return Err(Error::shape(format!(
            "filter bank expects {} channels, image has {c}",
            bank.in_channels()
        )));
    }
    let ker = bank.kernels();
    let (nk, _, ks, _) = ker.dim();
    let r = (ks / 2) as isize;
    let x = img.data();
    let mut out = Array3::<f64>::zeros((nk, h, w));
    for k in 0..nk {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for ch in 0..c {
                    for i in 0..ks {
                        let sy = reflect(y as isize + i as isize - r, h);
                        for j in 0..ks {
                            let sx = reflect(xx as isize + j as isize - r, w);
                            acc += ker[[k, ch, i, j]] * x[[ch, sy, sx]];
                        }
                    }
                }
                out[[k, y, xx]] = acc;
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`apply_filter_bank`]: `Σ_k L_kᵀ f_k`.
pub fn apply_filter_bank_adjoint(bank: &FilterBank, features: &Array3<f64>) -> Result<ImageTensor> {
    let (nk, h, w) = features.dim();
    let ker = bank.kernels();
    let (bk, c, ks, _) = ker.dim();
    if nk != bk {
        return Err(Error::shape(format!("{nk} feature maps for a bank of {bk} kernels")));
    }
    let r = (ks / 2) as isize;
    let mut out = Array3::<f64>::zeros((c, h, w));
    for k in 0..nk {
        for y in 0..h {
            for xx in 0..w {
                let f = features[[k, y, xx]];
                if f == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    for i in 0..ks {
                        let sy = reflect(y as isize + i as isize - r, h);
                        for j in 0..ks {
                            let sx = reflect(xx as isize + j as isize - r, w);
                            out[[ch, sy, sx]] += ker[[k, ch, i, j]] * f;
                        }
                    }
                }
            }
        }
    }
    Ok(ImageTensor::from_array_unchecked(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_bank(k: usize, c: usize, ks: usize, seed: u64) -> FilterBank {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = Array4::from_shape_fn((k, c, ks, ks), |_| rng.random::<f64>() - 0.5);
        FilterBank::normalized(&raw).unwrap()
    }

    #[test]
    fn constraints_hold_after_normalization() {
        let bank = random_bank(4, 3, 5, 1);
        for ker in bank.kernels().outer_iter() {
            assert!(ker.mean().unwrap().abs() < 1e-12);
            assert!((ker.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        }
        let ones = Array4::from_elem((1, 1, 3, 3), 1.0);
        assert!(FilterBank::normalized(&ones).is_err());
        assert!(FilterBank::new(ones).is_err());
    }

    #[test]
    fn zero_and_constant_inputs_vanish() {
        let bank = random_bank(3, 1, 3, 2);
        let z = apply_filter_bank(&bank, &ImageTensor::zeros(1, 6, 6)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let c = apply_filter_bank(&bank, &ImageTensor::constant(1, 6, 6, 0.8)).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn impulse_gives_flipped_footprint() {
        let raw = Array4::from_shape_vec((1, 1, 3, 3), (1..=9).map(|v| v as f64).collect()).unwrap();
        let bank = FilterBank::normalized(&raw).unwrap();
        let w = bank.kernels();
        let img = ImageTensor::from_fn(1, 7, 7, |(_, y, x)| if (y, x) == (3, 3) { 1.0 } else { 0.0 });
        let f = apply_filter_bank(&bank, &img).unwrap();
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let got = f[[0, (3 + dy) as usize, (3 + dx) as usize]];
                let expect = w[[0, 0, (1 - dy) as usize, (1 - dx) as usize]];
                assert!((got - expect).abs() < 1e-15);
            }
        }
        assert_eq!(f[[0, 0, 0]], 0.0);
    }

    #[test]
    fn adjoint_identity() {
        let bank = random_bank(4, 3, 5, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = ImageTensor::from_fn(3, 6, 7, |_| rng.random::<f64>());
        let g = Array3::from_shape_fn((4, 6, 7), |_| rng.random::<f64>() - 0.5);
        let lhs: f64 = apply_filter_bank(&bank, &x)
            .unwrap()
            .iter()
            .zip(g.iter())
            .map(|(a, b)| a * b)
            .sum();
        let rhs = x.dot(&apply_filter_bank_adjoint(&bank, &g).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch() {
        let bank = random_bank(2, 3, 3, 5);
        assert!(apply_filter_bank(&bank, &ImageTensor::zeros(1, 4, 4)).is_err());
    }
}
