use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bank::apply_filter_bank;
use super::energy::{energy, energy_grad, EnergyModel};
use super::prox::{prox_ball, BallConstraint};
use crate::error::{Error, Result};
use crate::imaging::{bilinear_upsample, ImageTensor};

/// How `Hᵀ` is realized when mapping the observation to the HR grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    /// Exact transpose of the bicubic downscaler.
    Adjoint,
    /// Bilinear upsampling, as in the generator network.
    Bilinear,
}

pub(crate) fn upsample(model: &EnergyModel, y: &ImageTensor, mode: UpsampleMode) -> Result<ImageTensor> {
    let s = model.scale;
    match mode {
        UpsampleMode::Adjoint => model.downscaler(y.height() * s, y.width() * s)?.adjoint(y),
        UpsampleMode::Bilinear => bilinear_upsample(y, s),
    }
}

/// One proximal-gradient update `P(X − γ ∇F(X))`.
pub fn pgm_step(model: &EnergyModel, x_prev: &ImageTensor, y: &ImageTensor, c: &BallConstraint) -> Result<ImageTensor> {
    let g = energy_grad(model, x_prev, y)?;
    let moved = x_prev.axpby(1.0, &g, -model.step)?;
    if let Some(center) = &c.center {
        moved.check_same_dims(center, "ball center")?;
    }
    Ok(prox_ball(&moved, c))
}

/// The single unrolled step the generator implements:
///
/// ```text
/// X = P_C(u − α Σ_k L_kᵀ φ_k(L_k u)),   u = Hᵀ Y
/// ```
///
/// `C` is the ball of radius `c.epsilon` around `u`, so the projection acts
/// on the residual `α Σ_k L_kᵀ φ_k(L_k u)`; any center set on `c` is ignored.
pub fn one_step_inference(
    model: &EnergyModel,
    y: &ImageTensor,
    c: &BallConstraint,
    alpha: f64,
    mode: UpsampleMode,
) -> Result<ImageTensor> {
    if y.channels() != model.bank.in_channels() {
        return Err(Error::shape(format!(
            "observation has {} channels, bank expects {}",
            y.channels(),
            model.bank.in_channels()
        )));
    }
    let u = upsample(model, y, mode)?;
    let residual = model.regularizer_grad(&u)?.scaled(alpha);
    let ball = c.centered_at(u.clone());
    Ok(prox_ball(&u.sub(&residual)?, &ball))
}

/// Largest eigenvalue of `HᵀH + λ·m·Σ_k L_kᵀL_k` (with `m = max(1, max|a_k|)`)
/// by power iteration from a seeded random start. This bounds the Lipschitz
/// constant of `∇F` on images of shape `dims`.
pub fn estimate_lipschitz(model: &EnergyModel, dims: (usize, usize, usize), iters: usize) -> Result<f64> {
    let (c, h, w) = dims;
    let hop = model.downscaler(h, w)?;
    let slope_bound = model.slopes.iter().fold(1.0f64, |m, a| m.max(a.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = ImageTensor::from_fn(c, h, w, |_| rng.random::<f64>() - 0.5);
    let n = v.norm();
    v = v.scaled(1.0 / n);
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let mut av = hop.adjoint(&hop.apply(&v)?)?;
        if model.lam > 0.0 {
            let feats = apply_filter_bank(&model.bank, &v)?;
            let ltl = super::bank::apply_filter_bank_adjoint(&model.bank, &feats)?;
            av = av.axpby(1.0, &ltl, model.lam * slope_bound)?;
        }
        lambda = v.dot(&av);
        let norm = av.norm();
        if norm == 0.0 {
            break;
        }
        v = av.scaled(1.0 / norm);
    }
    Ok(lambda)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Steps of consecutive energy increase tolerated before reporting divergence.
    pub divergence_patience: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 500,
            tol: 1e-6,
            divergence_patience: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x: ImageTensor,
    pub iterations: usize,
    pub converged: bool,
    /// `energies[0]` is `F(X⁰)`; `energies[t]` is `F(X^t)`.
    pub energies: Vec<f64>,
}

impl SolveReport {
    /// Writes `iteration,energy` rows.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = String::from("iteration,energy\n");
        for (t, e) in self.energies.iter().enumerate() {
            body.push_str(&format!("{t},{e:.17e}\n"));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Iterates [`pgm_step`] from `X⁰ = 0` until the relative change
/// `‖X^t − X^{t−1}‖ / ‖X^{t−1}‖` drops to `tol` or `max_iters` is reached.
pub fn pgm_solve(model: &EnergyModel, y: &ImageTensor, c: &BallConstraint, opts: &SolveOptions) -> Result<SolveReport> {
    if opts.max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let s = model.scale;
    let mut x = ImageTensor::zeros(y.channels(), y.height() * s, y.width() * s);
    let mut energies = vec![energy(model, &x, y)?];
    let mut rising = 0;
    for t in 1..=opts.max_iters {
        let next = pgm_step(model, &x, y, c)?;
        let e = energy(model, &next, y)?;
        if !e.is_finite() {
            return Err(Error::Divergence {
                iterations: t,
                streak: rising + 1,
            });
        }
        rising = if e > *energies.last().unwrap() { rising + 1 } else { 0 };
        energies.push(e);
        if rising >= opts.divergence_patience {
            return Err(Error::Divergence {
                iterations: t,
                streak: rising,
            });
        }
        let diff = next.sub(&x)?.norm();
        let prev = x.norm();
        let rel = if prev > 0.0 {
            diff / prev
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        x = next;
        if rel <= opts.tol {
            return Ok(SolveReport {
                x,
                iterations: t,
                converged: true,
                energies,
            });
        }
    }
    Ok(SolveReport {
        x,
        iterations: opts.max_iters,
        converged: false,
        energies,
    })
}
