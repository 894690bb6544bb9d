//! Classical baseline: proximal-gradient iterations on the explicit energy
//! with finite-difference filters, step `1/L` and a noise ball around the
//! upsampled observation.
//!
//! cargo run --example pgm_solve

use srres::evaluation::psnr;
use srres::imaging::{bicubic_resize, bilinear_upsample, degrade, DegradationSpec, ImageTensor};
use srres::variational::{estimate_lipschitz, pgm_solve, BallConstraint, EnergyModel, FilterBank, SolveOptions};

fn main() -> srres::Result<()> {
    let hr = ImageTensor::from_fn(
        1,
        32,
        32,
        |(_, y, x)| {
            if (x / 8 + y / 8) % 2 == 0 {
                0.25
            } else {
                0.75
            }
        },
    );
    let scale = 2;
    let y = degrade(&hr, &DegradationSpec::from_8bit_sigma(scale, 4.0, 1)?)?;
    for lam in [0.0, 0.01, 0.1] {
        let bank = FilterBank::finite_differences(1)?;
        let model = EnergyModel::with_uniform_slope(scale, lam, bank, 1.0, 1.0)?;
        let lip = estimate_lipschitz(&model, hr.dim(), 100)?;
        let model = model.with_step(1.0 / lip);
        let radius = 4.0 / 255.0 * (hr.len() as f64).sqrt() * 4.0;
        let ball = BallConstraint::new(radius)?.centered_at(bilinear_upsample(&y, scale)?);
        let rep = pgm_solve(&model, &y, &ball, &SolveOptions::default())?;
        println!(
            "lambda {lam:<5} L {lip:.3}: {} iterations (converged {}), energy {:.5} -> {:.5}, PSNR {:.2} dB",
            rep.iterations,
            rep.converged,
            rep.energies[0],
            rep.energies.last().unwrap(),
            psnr(&rep.x.clipped(), &hr)?
        );
    }
    println!(
        "bicubic upsampling: {:.2} dB",
        psnr(&bicubic_resize(&y, scale as f64)?.clipped(), &hr)?
    );
    Ok(())
}
