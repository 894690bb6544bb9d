use super::params::{stack_images, unstack_images, zeros, Bound, Init, Params};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Inputs are clamped to `[LOGIT_EPS, 1 − LOGIT_EPS]` before the logit.
const LOGIT_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainGeneratorConfig {
    pub channels: usize,
    pub blocks: usize,
    pub features: usize,
    pub kernel: usize,
}

impl Default for DomainGeneratorConfig {
    fn default() -> Self {
        DomainGeneratorConfig {
            channels: 3,
            blocks: 8,
            features: 64,
            kernel: 3,
        }
    }
}

impl DomainGeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.features == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(
                "domain generator needs positive widths and an odd kernel",
            ));
        }
        Ok(())
    }
}

/// Domain generator: a residual conv stack whose output is added to the
/// logit of the input before the final sigmoid. The tail conv starts at zero,
/// so an untrained network reproduces its (clamped) input.
///
/// Weights: `head.{w,b}`, `res.{i}.{w1,b1,w2,b2}`, `tail.{w,b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGenerator {
    pub cfg: DomainGeneratorConfig,
    pub params: Params,
}

impl DomainGenerator {
    pub fn new(cfg: DomainGeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let (c, f, k) = (cfg.channels, cfg.features, cfg.kernel);
        let mut p = Params::default();
        p.insert("head.w", init.conv(f, c, k, 1.0));
        p.insert("head.b", zeros(&[f]));
        for i in 0..cfg.blocks {
            for j in 1..=2 {
                p.insert(format!("res.{i}.w{j}"), init.conv(f, f, k, 0.1));
                p.insert(format!("res.{i}.b{j}"), zeros(&[f]));
            }
        }
        p.insert("tail.w", zeros(&[c, f, k, k]));
        p.insert("tail.b", zeros(&[c]));
        Ok(DomainGenerator { cfg, params: p })
    }

    /// `z` must be a constant NCHW variable with values in `[0, 1]`.
    pub fn forward(&self, tape: &Tape, b: &Bound, z: Var) -> Result<Var> {
        let shape = tape.shape(z);
        let pad = self.cfg.kernel / 2;
        if shape.len() != 4 || shape[1] != self.cfg.channels {
            return Err(Error::shape(format!(
                "domain generator expects N×{}×H×W, got {shape:?}",
                self.cfg.channels
            )));
        }
        if shape[2] <= pad || shape[3] <= pad {
            return Err(Error::shape(format!("input {}x{} too small", shape[2], shape[3])));
        }
        let logit = tape.constant(tape.value(z).mapv(|v| {
            let c = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
            (c / (1.0 - c)).ln()
        }));
        let conv = |x: Var, w: &str, bias: &str| {
            let x = tape.reflect_pad(x, pad);
            tape.conv2d(x, b.get(w), Some(b.get(bias)), 1)
        };
        let mut h = conv(z, "head.w", "head.b");
        h = tape.leaky_relu(h, 0.0);
        for i in 0..self.cfg.blocks {
            let t = conv(h, &format!("res.{i}.w1"), &format!("res.{i}.b1"));
            let t = tape.leaky_relu(t, 0.0);
            let t = conv(t, &format!("res.{i}.w2"), &format!("res.{i}.b2"));
            h = tape.add(h, t);
        }
        let delta = conv(h, "tail.w", "tail.b");
        let s = tape.add(logit, delta);
        Ok(tape.sigmoid(s))
    }

    pub fn infer(&self, z: &ImageTensor) -> Result<ImageTensor> {
        self.params.check_finite()?;
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let x = tape.constant(stack_images(&[z])?);
        let y = self.forward(&tape, &b, x)?;
        Ok(unstack_images(&tape.value(y))?.remove(0))
    }
}

/// Runs the domain generator on one image.
pub fn gd_forward(cfg: &DomainGeneratorConfig, weights: &Params, z: &ImageTensor) -> Result<ImageTensor> {
    DomainGenerator {
        cfg: cfg.clone(),
        params: weights.clone(),
    }
    .infer(z)
}
