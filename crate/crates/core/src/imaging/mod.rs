//! Image carrier, PNG IO, the degradation model `Y = H X + η`, noise
//! estimation, band splitting and augmentation.

mod augment;
mod degrade;
mod filter;
pub mod io;
mod noise;
pub mod resample;
mod tensor;

pub use augment::{
    extract_patch_at, extract_patches, flip_rotate, flip_rotate_inverse, mixup, patch_positions, D4_ORDER,
};
pub use degrade::{degrade, DegradationSpec};
pub use filter::{frequency_split, gaussian_blur, gaussian_kernel, reflect_index, BlurConfig};
pub use io::{load_png, save_png};
pub use noise::{estimate_noise_sigma, MadWaveletEstimator, NoiseEstimator};
pub use resample::{bicubic_resize, bilinear_upsample, Resampler2d};
pub use tensor::ImageTensor;

use crate::error::{Error, Result};

/// An LR/HR training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub lr: ImageTensor,
    pub hr: ImageTensor,
}

impl SamplePair {
    /// Builds a pair, checking `hr = scale × lr` on both axes.
    pub fn new(lr: ImageTensor, hr: ImageTensor, scale: usize) -> Result<Self> {
        let pair = SamplePair { lr, hr };
        pair.check_scale(scale)?;
        Ok(pair)
    }

    pub fn check_scale(&self, scale: usize) -> Result<()> {
        let (lc, lh, lw) = self.lr.dim();
        let (hc, hh, hw) = self.hr.dim();
        if lc != hc || hh != lh * scale || hw != lw * scale {
            return Err(Error::shape(format!(
                "pair lr {:?} / hr {:?} inconsistent with scale {scale}",
                self.lr.dim(),
                self.hr.dim()
            )));
        }
        Ok(())
    }
}
