use super::ImageTensor;
use crate::error::{Error, Result};

/// Blind estimate of the additive Gaussian noise level of an image.
pub trait NoiseEstimator {
    fn estimate(&self, img: &ImageTensor) -> Result<f64>;
}

/// Median absolute deviation of the finest diagonal Haar subband, scaled by
/// `1/0.6745`. Channels are estimated separately and averaged.
#[derive(Clone, Copy, Debug, Default)]
pub struct MadWaveletEstimator;

const MAD_TO_SIGMA: f64 = 1.0 / 0.6745;

impl NoiseEstimator for MadWaveletEstimator {
    fn estimate(&self, img: &ImageTensor) -> Result<f64> {
        let (c, h, w) = img.dim();
        if h < 8 || w < 8 {
            return Err(Error::shape(format!(
                "noise estimation needs at least 8x8 pixels, got {h}x{w}"
            )));
        }
        let data = img.data();
        let mut total = 0.0;
        let mut coeffs = Vec::with_capacity((h / 2) * (w / 2));
        for ch in 0..c {
            coeffs.clear();
            for y in (0..h - 1).step_by(2) {
                for x in (0..w - 1).step_by(2) {
                    let hh = (data[[ch, y, x]] - data[[ch, y, x + 1]] - data[[ch, y + 1, x]]
                        + data[[ch, y + 1, x + 1]])
                        / 2.0;
                    coeffs.push(hh.abs());
                }
            }
            total += median(&mut coeffs) * MAD_TO_SIGMA;
        }
        Ok(total / c as f64)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Noise level with the default wavelet-MAD estimator.
pub fn estimate_noise_sigma(img: &ImageTensor) -> Result<f64> {
    MadWaveletEstimator.estimate(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_has_no_noise() {
        assert_eq!(
            estimate_noise_sigma(&ImageTensor::constant(3, 16, 16, 0.7)).unwrap(),
            0.0
        );
    }

    #[test]
    fn recovers_gaussian_sigma() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = Normal::new(0.0, 0.05).unwrap();
        let img = ImageTensor::from_fn(1, 128, 128, |_| 0.5 + n.sample(&mut rng));
        let est = estimate_noise_sigma(&img).unwrap();
        assert!((0.04..=0.06).contains(&est), "{est}");
    }

    #[test]
    fn smooth_ramp_reads_as_clean() {
        let img = ImageTensor::from_fn(3, 32, 48, |(c, y, x)| {
            (0.2 + 0.01 * x as f64 + 0.005 * y as f64 + 0.05 * c as f64).min(1.0)
        });
        assert!(estimate_noise_sigma(&img).unwrap() <= 0.005);
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(estimate_noise_sigma(&ImageTensor::constant(1, 7, 20, 0.1)).is_err());
    }
}
