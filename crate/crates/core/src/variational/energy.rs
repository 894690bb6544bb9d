use ndarray::Array3;

use super::bank::{apply_filter_bank, apply_filter_bank_adjoint, FilterBank};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, Resampler2d};

/// Everything that defines `F(X)`: downscaling factor, regularization weight,
/// filter bank, PReLU slopes (one per kernel) and the gradient step size.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub scale: usize,
    pub lam: f64,
    pub bank: FilterBank,
    pub slopes: Vec<f64>,
    pub step: f64,
}

impl EnergyModel {
    pub fn new(scale: usize, lam: f64, bank: FilterBank, slopes: Vec<f64>, step: f64) -> Result<Self> {
        let m = EnergyModel {
            scale,
            lam,
            bank,
            slopes,
            step,
        };
        m.validate()?;
        Ok(m)
    }

    /// Same slope for every kernel.
    pub fn with_uniform_slope(scale: usize, lam: f64, bank: FilterBank, slope: f64, step: f64) -> Result<Self> {
        let slopes = vec![slope; bank.len()];
        Self::new(scale, lam, bank, slopes, step)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::invalid("scale must be positive"));
        }
        if !(self.lam >= 0.0 && self.lam.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lam
            )));
        }
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!(
                "step must be finite and >= 0, got {}",
                self.step
            )));
        }
        if self.slopes.len() != self.bank.len() {
            return Err(Error::invalid(format!(
                "{} slopes for {} kernels",
                self.slopes.len(),
                self.bank.len()
            )));
        }
        if self.slopes.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("PReLU slopes".into()));
        }
        Ok(())
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    /// The downscaler `H` for HR images of `h×w`.
    pub fn downscaler(&self, h: usize, w: usize) -> Result<Resampler2d> {
        if !h.is_multiple_of(self.scale) || !w.is_multiple_of(self.scale) {
            return Err(Error::shape(format!("{h}x{w} not divisible by scale {}", self.scale)));
        }
        Resampler2d::bicubic(h, w, 1.0 / self.scale as f64)
    }

    pub(crate) fn check_pair(&self, x: &ImageTensor, y: &ImageTensor) -> Result<Resampler2d> {
        let (c, h, w) = x.dim();
        let s = self.scale;
        if y.dim() != (c, h / s, w / s) || h % s != 0 || w % s != 0 {
            return Err(Error::shape(format!(
                "observation {:?} is not the 1/{s} downscale of {:?}",
                y.dim(),
                x.dim()
            )));
        }
        self.downscaler(h, w)
    }

    /// `ρ_k(t)`, the antiderivative of the PReLU `φ_k`.
    pub fn potential(&self, k: usize, t: f64) -> f64 {
        if t >= 0.0 {
            0.5 * t * t
        } else {
            0.5 * self.slopes[k] * t * t
        }
    }

    /// `φ_k(t)`.
    pub fn potential_grad(&self, k: usize, t: f64) -> f64 {
        if t >= 0.0 {
            t
        } else {
            self.slopes[k] * t
        }
    }

    /// `Σ_k L_kᵀ φ_k(L_k X)`.
    pub fn regularizer_grad(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let mut feats = apply_filter_bank(&self.bank, x)?;
        for (k, mut plane) in feats.outer_iter_mut().enumerate() {
            plane.mapv_inplace(|t| self.potential_grad(k, t));
        }
        apply_filter_bank_adjoint(&self.bank, &feats)
    }

    fn regularizer(&self, feats: &Array3<f64>) -> f64 {
        feats
            .outer_iter()
            .enumerate()
            .map(|(k, plane)| plane.iter().map(|&t| self.potential(k, t)).sum::<f64>())
            .sum()
    }
}

/// `F(X) = ½‖Y − H X‖² + λ Σ_k Σ ρ_k(L_k X)`.
pub fn energy(model: &EnergyModel, x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    let h = model.check_pair(x, y)?;
    let resid = y.sub(&h.apply(x)?)?;
    let data = 0.5 * resid.dot(&resid);
    if model.lam == 0.0 {
        return Ok(data);
    }
    let feats = apply_filter_bank(&model.bank, x)?;
    Ok(data + model.lam * model.regularizer(&feats))
}

/// `∇F(X) = Hᵀ(H X − Y) + λ Σ_k L_kᵀ φ_k(L_k X)`.
pub fn energy_grad(model: &EnergyModel, x: &ImageTensor, y: &ImageTensor) -> Result<ImageTensor> {
    let h = model.check_pair(x, y)?;
    let data = h.adjoint(&h.apply(x)?.sub(y)?)?;
    if model.lam == 0.0 {
        return Ok(data);
    }
    data.axpby(1.0, &model.regularizer_grad(x)?, model.lam)
}
