use std::rc::Rc;

use ndarray::{Array4, Ix4};

use super::params::{filled, stack_images, unstack_images, zeros, Bound, Init, Params};
use super::ProjectionLayer;
use crate::autograd::{scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::resample::Resampler2d;
use crate::imaging::{estimate_noise_sigma, ImageTensor};
use crate::variational::FilterBank;

/// Shape of the SR generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSRConfig {
    pub scale: usize,
    pub channels: usize,
    /// Encoder/decoder feature maps.
    pub features: usize,
    /// Encoder/decoder kernel size.
    pub kernel: usize,
    pub blocks: usize,
    pub block_kernel: usize,
    /// Replace the resnet with a single PReLU and tie the decoder to the
    /// encoder, which turns the network into one proximal-gradient step.
    pub analytic: bool,
}

impl Default for GeneratorSRConfig {
    fn default() -> Self {
        GeneratorSRConfig {
            scale: 4,
            channels: 3,
            features: 64,
            kernel: 5,
            blocks: 5,
            block_kernel: 3,
            analytic: false,
        }
    }
}

impl GeneratorSRConfig {
    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4].contains(&self.scale) {
            return Err(Error::invalid(format!("scale must be 1, 2 or 4, got {}", self.scale)));
        }
        if self.channels == 0 || self.features == 0 {
            return Err(Error::invalid("channel and feature counts must be positive"));
        }
        for (name, k) in [("kernel", self.kernel), ("block_kernel", self.block_kernel)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::invalid(format!("{name} must be odd and positive, got {k}")));
            }
        }
        Ok(())
    }
}

/// SR generator: bilinear upsampling, encoder, resnet, decoder, learned
/// projection of the residual, subtraction and intensity clipping.
///
/// Weights: `enc.w` (and `dec.w` unless analytic) are raw kernels that are
/// normalized in the forward pass; `res.{i}.{a1,w1,b1,a2,w2,b2}` are the
/// pre-activation blocks; `act.a` is the analytic-mode PReLU; `res_scale`
/// scales the decoded residual and `proj.alpha` is the log threshold scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSR {
    pub cfg: GeneratorSRConfig,
    pub params: Params,
}

impl GeneratorSR {
    /// Random initialization. The residual scale starts at zero, so an
    /// untrained generator returns the clipped bilinear upsampling.
    pub fn new(cfg: GeneratorSRConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let (c, f, k) = (cfg.channels, cfg.features, cfg.kernel);
        let mut p = Params::default();
        p.insert("enc.w", init.normal(&[f, c, k, k], 1.0));
        if cfg.analytic {
            p.insert("act.a", filled(&[f], 0.25));
        } else {
            p.insert("dec.w", init.normal(&[f, c, k, k], 1.0));
            let bk = cfg.block_kernel;
            for i in 0..cfg.blocks {
                for j in 1..=2 {
                    p.insert(format!("res.{i}.a{j}"), filled(&[f], 0.25));
                    p.insert(format!("res.{i}.w{j}"), init.conv(f, f, bk, 0.1));
                    p.insert(format!("res.{i}.b{j}"), zeros(&[f]));
                }
            }
        }
        p.insert("res_scale", scalar(0.0));
        p.insert("proj.alpha", scalar(ProjectionLayer::ALPHA_MAX));
        let mut g = GeneratorSR { cfg, params: p };
        g.renormalize()?;
        Ok(g)
    }

    /// Analytic-mode generator reproducing one proximal-gradient step with
    /// filter bank `bank`, potential slope `slope`, step `step` and projection
    /// log-scale `alpha`.
    pub fn analytic(scale: usize, bank: &FilterBank, slope: f64, step: f64, alpha: f64) -> Result<Self> {
        let (kn, c, k, _) = bank.kernels().dim();
        let cfg = GeneratorSRConfig {
            scale,
            channels: c,
            features: kn,
            kernel: k,
            blocks: 0,
            block_kernel: 3,
            analytic: true,
        };
        cfg.validate()?;
        let mut p = Params::default();
        p.insert("enc.w", bank.kernels().clone().into_dyn());
        p.insert("act.a", filled(&[kn], slope));
        p.insert("res_scale", scalar(step));
        p.insert("proj.alpha", scalar(alpha));
        Ok(GeneratorSR { cfg, params: p })
    }

    /// Names of the constrained filter arrays.
    pub fn filter_names(&self) -> &'static [&'static str] {
        if self.cfg.analytic {
            &["enc.w"]
        } else {
            &["enc.w", "dec.w"]
        }
    }

    /// Re-applies the zero-mean / unit-norm constraint to the stored filters.
    pub fn renormalize(&mut self) -> Result<()> {
        for name in self.filter_names() {
            let w = self.params.get_mut(name)?;
            let raw = w
                .view()
                .into_dimensionality::<Ix4>()
                .map_err(|_| Error::shape("filters must be 4-d"))?;
            let bank = FilterBank::normalized(&raw.to_owned())?;
            *w = bank.kernels().clone().into_dyn();
        }
        Ok(())
    }

    /// Constrained filter banks (encoder, then decoder in full mode).
    pub fn filter_banks(&self) -> Result<Vec<FilterBank>> {
        self.filter_names()
            .iter()
            .map(|n| {
                let w = self.params.get(n)?;
                let w4: Array4<f64> = w
                    .view()
                    .into_dimensionality::<Ix4>()
                    .map_err(|_| Error::shape("filters must be 4-d"))?
                    .to_owned();
                FilterBank::normalized(&w4)
            })
            .collect()
    }

    /// Output before the final clip; `lr` is an NCHW variable.
    pub fn forward_unclipped(&self, tape: &Tape, b: &Bound, lr: Var, sigmas: &[f64]) -> Result<Var> {
        let shape = tape.shape(lr);
        if shape.len() != 4 || shape[1] != self.cfg.channels {
            return Err(Error::shape(format!(
                "generator expects N×{}×H×W input, got {shape:?}",
                self.cfg.channels
            )));
        }
        if shape[0] != sigmas.len() {
            return Err(Error::shape(format!(
                "{} noise levels for a batch of {}",
                sigmas.len(),
                shape[0]
            )));
        }
        let s = self.cfg.scale;
        let (h, w) = (shape[2] * s, shape[3] * s);
        let p = self.cfg.kernel / 2;
        if h <= p.max(self.cfg.block_kernel / 2) || w <= p.max(self.cfg.block_kernel / 2) {
            return Err(Error::shape(format!(
                "input {}x{} is smaller than the receptive field",
                shape[2], shape[3]
            )));
        }
        let up = Rc::new(Resampler2d::bilinear(shape[2], shape[3], s)?);
        let u = tape.resample(lr, up);
        let enc = tape.normalize_filters(b.get("enc.w"))?;
        let padded = tape.reflect_pad(u, p);
        let mut f = tape.conv2d(padded, enc, None, 1);
        let dec = if self.cfg.analytic {
            f = tape.prelu(f, b.get("act.a"));
            enc
        } else {
            let bp = self.cfg.block_kernel / 2;
            for i in 0..self.cfg.blocks {
                let mut t = f;
                for j in 1..=2 {
                    t = tape.prelu(t, b.get(&format!("res.{i}.a{j}")));
                    t = tape.reflect_pad(t, bp);
                    t = tape.conv2d(
                        t,
                        b.get(&format!("res.{i}.w{j}")),
                        Some(b.get(&format!("res.{i}.b{j}"))),
                        1,
                    );
                }
                f = tape.add(f, t);
            }
            tape.normalize_filters(b.get("dec.w"))?
        };
        let d = tape.conv_transpose2d(f, dec, 1);
        let d = tape.reflect_fold(d, p);
        let r = tape.mul_scalar(d, b.get("res_scale"));
        let r = tape.project_ball(r, b.get("proj.alpha"), sigmas);
        Ok(tape.sub(u, r))
    }

    pub fn forward(&self, tape: &Tape, b: &Bound, lr: Var, sigmas: &[f64]) -> Result<Var> {
        let x = self.forward_unclipped(tape, b, lr, sigmas)?;
        Ok(tape.clamp(x, 0.0, 1.0))
    }

    fn run(&self, lr: &ImageTensor, sigma: Option<f64>, clip: bool) -> Result<ImageTensor> {
        self.params.check_finite()?;
        let sigma = match sigma {
            Some(s) if s >= 0.0 && s.is_finite() => s,
            Some(s) => return Err(Error::invalid(format!("sigma must be finite and >= 0, got {s}"))),
            None => estimate_noise_sigma(lr)?,
        };
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let x = tape.constant(stack_images(&[lr])?);
        let y = if clip {
            self.forward(&tape, &b, x, &[sigma])?
        } else {
            self.forward_unclipped(&tape, &b, x, &[sigma])?
        };
        Ok(unstack_images(&tape.value(y))?.remove(0))
    }

    /// Super-resolves one image; `sigma = None` estimates the noise level from `lr`.
    pub fn infer(&self, lr: &ImageTensor, sigma: Option<f64>) -> Result<ImageTensor> {
        self.run(lr, sigma, true)
    }

    /// Like [`infer`](Self::infer) but without the final clip to `[0, 1]`.
    pub fn infer_unclipped(&self, lr: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
        self.run(lr, Some(sigma), false)
    }
}

/// Runs the SR generator with the given configuration and weights on one image.
pub fn gsr_forward(cfg: &GeneratorSRConfig, weights: &Params, lr: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    let g = GeneratorSR {
        cfg: cfg.clone(),
        params: weights.clone(),
    };
    g.infer(lr, Some(sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::bilinear_upsample;
    use crate::networks::{projection_threshold, ProjectionLayer};
    use crate::variational::{one_step_inference, BallConstraint, EnergyModel, UpsampleMode};
    use rand::{Rng, SeedableRng};

    fn small_cfg() -> GeneratorSRConfig {
        GeneratorSRConfig {
            scale: 2,
            channels: 3,
            features: 4,
            kernel: 3,
            blocks: 1,
            block_kernel: 3,
            analytic: false,
        }
    }

    fn rand_img(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_| rng.random())
    }

    #[test]
    fn untrained_generator_is_the_bilinear_upsampler() {
        let g = GeneratorSR::new(small_cfg(), 1).unwrap();
        let lr = rand_img(3, 6, 5, 2);
        let out = g.infer(&lr, Some(0.02)).unwrap();
        assert_eq!(out.dim(), (3, 12, 10));
        assert_eq!(out, bilinear_upsample(&lr, 2).unwrap().clipped());
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = GeneratorSRConfig {
            scale: 4,
            blocks: 1,
            features: 8,
            ..Default::default()
        };
        let mut g = GeneratorSR::new(cfg, 3).unwrap();
        *g.params.get_mut("res_scale").unwrap() = scalar(5.0);
        let out = g.infer(&rand_img(3, 32, 32, 4), Some(0.5)).unwrap();
        assert_eq!(out.dim(), (3, 128, 128));
        assert!(out.min() >= 0.0 && out.max() <= 1.0);
    }

    #[test]
    fn stored_filters_satisfy_constraints() {
        let g = GeneratorSR::new(small_cfg(), 5).unwrap();
        for name in g.filter_names() {
            let w = g.params.get(name).unwrap();
            for k in w.outer_iter() {
                assert!(k.mean().unwrap().abs() < 1e-12);
                assert!((k.mapv(|v| v * v).sum().sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn analytic_mode_is_one_proximal_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for draw in 0..5 {
            let raw = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.random::<f64>() - 0.5);
            let bank = FilterBank::normalized(&raw).unwrap();
            let slope: f64 = rng.random_range(-0.5..1.0);
            let step: f64 = rng.random_range(0.05..0.5);
            let alpha: f64 = rng.random_range(-1.0..2.0);
            let sigma = 0.03;
            let y = rand_img(3, 8, 8, 100 + draw);
            let g = GeneratorSR::analytic(2, &bank, slope, step, alpha).unwrap();
            let net = g.infer_unclipped(&y, sigma).unwrap();
            let model = EnergyModel::with_uniform_slope(2, 1.0, bank, slope, 1.0).unwrap();
            let eps = projection_threshold(&ProjectionLayer::new(alpha, sigma).unwrap(), (3, 16, 16)).unwrap();
            let reference = one_step_inference(
                &model,
                &y,
                &BallConstraint::new(eps).unwrap(),
                step,
                UpsampleMode::Bilinear,
            )
            .unwrap();
            assert!(net.max_abs_diff(&reference) < 1e-12, "draw {draw}");
            assert!(g.infer(&y, Some(sigma)).unwrap().max_abs_diff(&reference.clipped()) < 1e-12);
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let cfg = GeneratorSRConfig {
            scale: 2,
            channels: 1,
            features: 2,
            kernel: 3,
            blocks: 1,
            block_kernel: 3,
            analytic: false,
        };
        let mut g = GeneratorSR::new(cfg, 7).unwrap();
        *g.params.get_mut("res_scale").unwrap() = scalar(0.7);
        *g.params.get_mut("proj.alpha").unwrap() = scalar(0.0);
        assert!(g.params.count() < 200);
        let lr = stack_images(&[&rand_img(1, 4, 4, 8)]).unwrap();
        let names: Vec<String> = g.params.values.keys().cloned().collect();
        let inputs: Vec<_> = names.iter().map(|n| g.params.get(n).unwrap().clone()).collect();
        let err = crate::autograd::gradcheck::check(&inputs, 1e-6, |t, vars| {
            let b = Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()));
            let x = t.constant(lr.clone());
            let y = g.forward_unclipped(t, &b, x, &[0.05]).unwrap();
            let sq = t.mul(y, y);
            t.sum(sq)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = GeneratorSR::new(small_cfg(), 9).unwrap();
        assert!(g.infer(&rand_img(1, 8, 8, 1), Some(0.1)).is_err());
        assert!(g.infer(&rand_img(3, 8, 8, 1), Some(-0.1)).is_err());
        let mut bad = g.clone();
        bad.params.get_mut("res_scale").unwrap()[[]] = f64::NAN;
        assert!(bad.infer(&rand_img(3, 8, 8, 1), Some(0.1)).is_err());
    }
}
