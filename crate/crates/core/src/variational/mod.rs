//! The explicit variational model behind the generator:
//!
//! ```text
//! F(X) = ½‖Y − H X‖² + λ Σ_k Σ_px ρ_k((L_k X)_px)
//! ```
//!
//! with `H` the antialiased bicubic downscaler, `L_k` a zero-mean unit-norm
//! filter bank applied with reflection padding, and `ρ_k` the antiderivative
//! of a PReLU with slope `a_k` (`ρ(t) = t²/2` for `t ≥ 0`, `a·t²/2` below).
//! Minimization over an ℓ2 ball runs a proximal-gradient iteration; a single
//! step of it started at the data is what the generator network unrolls.

mod bank;
mod energy;
mod prox;
mod solver;

pub use bank::{apply_filter_bank, apply_filter_bank_adjoint, FilterBank};
pub use energy::{energy, energy_grad, EnergyModel};
pub use prox::{prox_ball, BallConstraint};
pub use solver::{
    estimate_lipschitz, one_step_inference, pgm_solve, pgm_step, SolveOptions, SolveReport, UpsampleMode,
};
