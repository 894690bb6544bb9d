use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{bicubic_resize, ImageTensor};
use crate::error::{Error, Result};

/// Parameters of the synthetic observation model: bicubic downscale by
/// `scale`, additive white Gaussian noise of std `noise_sigma` (in `[0,1]`
/// intensity units), then clipping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub scale: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(scale: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        let spec = DegradationSpec {
            scale,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Sigma given in 8-bit units (e.g. `8` for the common sensor-noise setting).
    pub fn from_8bit_sigma(scale: usize, sigma_255: f64, seed: u64) -> Result<Self> {
        Self::new(scale, sigma_255 / 255.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4].contains(&self.scale) {
            return Err(Error::invalid(format!("scale must be 1, 2 or 4, got {}", self.scale)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 1.0) {
            return Err(Error::invalid(format!(
                "noise sigma must lie in [0, 1), got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

pub fn degrade(img: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let s = spec.scale;
    if !img.height().is_multiple_of(s) || !img.width().is_multiple_of(s) {
        return Err(Error::shape(format!(
            "image {}x{} not divisible by scale {s}",
            img.height(),
            img.width()
        )));
    }
    let down = bicubic_resize(img, 1.0 / s as f64)?;
    if spec.noise_sigma == 0.0 {
        return Ok(down);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = down;
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_equals_bicubic() {
        let img = ImageTensor::from_fn(3, 16, 16, |(c, y, x)| ((c + y * x) % 7) as f64 / 7.0);
        let spec = DegradationSpec::new(4, 0.0, 1).unwrap();
        assert_eq!(degrade(&img, &spec).unwrap(), bicubic_resize(&img, 0.25).unwrap());
    }

    #[test]
    fn noise_statistic_matches_sigma() {
        // 64×64 HR at scale 1 keeps 64×64 samples of noise.
        let img = ImageTensor::constant(1, 64, 64, 0.5);
        let spec = DegradationSpec::from_8bit_sigma(1, 8.0, 11).unwrap();
        let out = degrade(&img, &spec).unwrap();
        let n = out.len() as f64;
        let mean = out.mean();
        let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 8.0 / 255.0;
        assert!((var.sqrt() - target).abs() / target < 0.1, "{}", var.sqrt());
    }

    #[test]
    fn seeded_and_validated() {
        let img = ImageTensor::constant(3, 8, 8, 0.5);
        let spec = DegradationSpec::new(2, 0.05, 9).unwrap();
        assert_eq!(degrade(&img, &spec).unwrap(), degrade(&img, &spec).unwrap());
        assert!(degrade(
            &ImageTensor::constant(1, 6, 8, 0.1),
            &DegradationSpec::new(4, 0.0, 0).unwrap()
        )
        .is_err());
        assert!(DegradationSpec::new(3, 0.0, 0).is_err());
        assert!(DegradationSpec::new(2, 1.0, 0).is_err());
    }
}
