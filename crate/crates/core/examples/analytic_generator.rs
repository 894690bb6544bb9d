//! The SR generator in analytic mode is exactly one proximal-gradient step;
//! compare it with the solver-side single step at several ball radii.
//!
//! cargo run --example analytic_generator

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srres::networks::{gsr_forward, projection_threshold, GeneratorSR, ProjectionLayer};
use srres::variational::{one_step_inference, BallConstraint, EnergyModel, FilterBank, UpsampleMode};

fn main() -> srres::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let raw = Array4::from_shape_fn((8, 3, 5, 5), |_| rng.random::<f64>() - 0.5);
    let bank = FilterBank::normalized(&raw)?;
    let y = srres::ImageTensor::from_fn(3, 8, 8, |_| rng.random());
    let (slope, step, sigma) = (0.25, 0.1, 0.02);
    for alpha in [-2.0, 0.0, 2.0] {
        let g = GeneratorSR::analytic(4, &bank, slope, step, alpha)?;
        let net = gsr_forward(&g.cfg, &g.params, &y, sigma)?;
        let model = EnergyModel::with_uniform_slope(4, 1.0, bank.clone(), slope, 1.0)?;
        let eps = projection_threshold(&ProjectionLayer::new(alpha, sigma)?, net.dim())?;
        let step_out = one_step_inference(&model, &y, &BallConstraint::new(eps)?, step, UpsampleMode::Bilinear)?;
        println!(
            "alpha {alpha:+.1}: ball radius {eps:.4}, max |network - proximal step| = {:.2e}",
            net.max_abs_diff(&step_out.clipped())
        );
    }
    Ok(())
}
