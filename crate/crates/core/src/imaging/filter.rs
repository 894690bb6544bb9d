use ndarray::{Array2, Array3};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Gaussian low-pass used to split images into low and high bands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlurConfig {
    pub kernel_size: usize,
    pub sigma: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            kernel_size: 5,
            sigma: 1.5,
        }
    }
}

impl BlurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "blur kernel size must be odd and >= 3, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "blur sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Normalized `k×k` Gaussian with standard deviation `sigma`.
pub fn gaussian_kernel(cfg: &BlurConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let r = (cfg.kernel_size / 2) as f64;
    let mut k = Array2::from_shape_fn((cfg.kernel_size, cfg.kernel_size), |(i, j)| {
        let (dy, dx) = (i as f64 - r, j as f64 - r);
        (-(dx * dx + dy * dy) / (2.0 * cfg.sigma * cfg.sigma)).exp()
    });
    let total = k.sum();
    k /= total;
    Ok(k)
}

/// Reflect index (`-1 → 1`, `n → n-2`), the convention used by all padded convolutions here.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Per-channel Gaussian blur with reflection padding.
pub fn gaussian_blur(img: &ImageTensor, cfg: &BlurConfig) -> Result<ImageTensor> {
    let k = gaussian_kernel(cfg)?;
    let (c, h, w) = img.dim();
    let r = (cfg.kernel_size / 2) as isize;
    let src = img.data();
    let out = Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let mut acc = 0.0;
        for dy in -r..=r {
            let yy = reflect_index(y as isize + dy, h);
            for dx in -r..=r {
                let xx = reflect_index(x as isize + dx, w);
                acc += k[[(dy + r) as usize, (dx + r) as usize]] * src[[ch, yy, xx]];
            }
        }
        acc
    });
    Ok(ImageTensor::from_array_unchecked(out))
}

/// Splits `img` into a Gaussian low band and the complementary high band
/// (`low + high == img`).
pub fn frequency_split(img: &ImageTensor, cfg: &BlurConfig) -> Result<(ImageTensor, ImageTensor)> {
    let low = gaussian_blur(img, cfg)?;
    let high = img.sub(&low)?;
    Ok((low, high))
}
