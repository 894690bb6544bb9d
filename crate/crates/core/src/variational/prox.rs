use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Euclidean ball `{X : ‖X − center‖₂ ≤ ε}`; the center defaults to the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct BallConstraint {
    pub epsilon: f64,
    pub center: Option<ImageTensor>,
}

impl BallConstraint {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "ball radius must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(BallConstraint { epsilon, center: None })
    }

    /// A radius large enough never to bind.
    pub fn unbounded() -> Self {
        BallConstraint {
            epsilon: f64::MAX,
            center: None,
        }
    }

    pub fn centered_at(&self, center: ImageTensor) -> Self {
        BallConstraint {
            epsilon: self.epsilon,
            center: Some(center),
        }
    }
}

/// Projects `z` onto the origin ball of radius `epsilon`.
pub(crate) fn project_origin(z: &ImageTensor, epsilon: f64) -> ImageTensor {
    let norm = z.norm();
    if norm <= epsilon {
        z.clone()
    } else {
        z.scaled(epsilon / norm)
    }
}

/// Euclidean projection onto the ball: identity inside, radial rescaling outside.
pub fn prox_ball(z: &ImageTensor, c: &BallConstraint) -> ImageTensor {
    match &c.center {
        None => project_origin(z, c.epsilon),
        Some(center) => {
            let offset = z.sub(center).expect("ball center dims must match the point");
            center
                .add(&project_origin(&offset, c.epsilon))
                .expect("dims checked above")
        }
    }
}
