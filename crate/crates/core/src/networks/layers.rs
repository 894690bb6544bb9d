use ndarray::Array4;

use crate::autograd::sigmoid;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::variational::{prox_ball, BallConstraint, FilterBank};

/// Learned proximal map: projection onto a ball whose radius scales with the
/// noise level of the current input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionLayer {
    /// Log-scale of the threshold.
    pub alpha: f64,
    pub sigma: f64,
}

impl ProjectionLayer {
    pub const ALPHA_MAX: f64 = 2.0;
    pub const ALPHA_MIN: f64 = 1.0;

    pub fn new(alpha: f64, sigma: f64) -> Result<Self> {
        if !alpha.is_finite() || !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "projection needs finite alpha and sigma >= 0, got {alpha}, {sigma}"
            )));
        }
        Ok(ProjectionLayer { alpha, sigma })
    }
}

/// `ε = e^α · σ · √(C·H·W − 1)`.
pub fn projection_threshold(layer: &ProjectionLayer, shape: (usize, usize, usize)) -> Result<f64> {
    let n = shape.0 * shape.1 * shape.2;
    if n < 2 {
        return Err(Error::invalid(format!("projection needs at least 2 elements, got {n}")));
    }
    Ok(layer.alpha.exp() * layer.sigma * ((n - 1) as f64).sqrt())
}

/// Projects `z` onto the origin ball of radius [`projection_threshold`].
pub fn project(layer: &ProjectionLayer, z: &ImageTensor) -> Result<ImageTensor> {
    let eps = projection_threshold(layer, z.dim())?;
    Ok(prox_ball(z, &BallConstraint::new(eps)?))
}

/// Zero-mean, unit-norm reparametrization of raw `K×C×k×k` kernels.
pub fn parametrize_filters(raw: &Array4<f64>) -> Result<FilterBank> {
    FilterBank::normalized(raw)
}

/// Pointwise clamp to the displayable range `[0, 1]`.
pub fn clip_intensities(img: &ImageTensor) -> ImageTensor {
    img.clipped()
}

/// `σ(a − b)`: probability that `a` is more realistic than the opposing batch mean `b`.
pub fn relativistic_prob(score_a: f64, mean_score_b: f64) -> f64 {
    sigmoid(score_a - mean_score_b)
}
