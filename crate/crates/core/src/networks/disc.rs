use ndarray::{Array1, Array2, Ix1};

use super::params::{filled, stack_images, zeros, Bound, Init, Params};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

const BN_EPS: f64 = 1e-5;
const LRELU: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorKind {
    /// Image-level critic for HR patches: 3×3 / 4×4-stride-2 pairs and a dense head.
    Hr { patch: usize },
    /// Fully convolutional critic emitting one score per receptive field.
    Patch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub channels: usize,
    /// Hr: base width (doubled every second stage up to 8×); Patch: width of every conv.
    pub widths: Vec<usize>,
    /// Hidden width of the dense head (Hr only).
    pub hidden: usize,
}

impl DiscriminatorConfig {
    pub fn hr(patch: usize) -> Self {
        DiscriminatorConfig {
            kind: DiscriminatorKind::Hr { patch },
            channels: 3,
            widths: vec![64],
            hidden: 100,
        }
    }

    pub fn patch() -> Self {
        DiscriminatorConfig {
            kind: DiscriminatorKind::Patch,
            channels: 3,
            widths: vec![64, 128, 256],
            hidden: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("discriminator widths must be positive"));
        }
        if let DiscriminatorKind::Hr { patch } = self.kind {
            if patch == 0 || patch % 32 != 0 {
                return Err(Error::invalid(format!(
                    "HR discriminator patch must be a multiple of 32, got {patch}"
                )));
            }
            if self.hidden == 0 {
                return Err(Error::invalid("dense head width must be positive"));
            }
        }
        Ok(())
    }

    fn layers(&self) -> Vec<ConvSpec> {
        match self.kind {
            DiscriminatorKind::Hr { .. } => {
                let b = self.widths[0];
                let stages = [b, b, 2 * b, 2 * b, 4 * b, 4 * b, 8 * b, 8 * b, 8 * b, 8 * b];
                let mut cin = self.channels;
                stages
                    .iter()
                    .enumerate()
                    .map(|(i, &cout)| {
                        let strided = i % 2 == 1;
                        let spec = ConvSpec {
                            cin,
                            cout,
                            k: if strided { 4 } else { 3 },
                            stride: if strided { 2 } else { 1 },
                            pad: 1,
                            bn: i > 0,
                        };
                        cin = cout;
                        spec
                    })
                    .collect()
            }
            DiscriminatorKind::Patch => {
                let mut cin = self.channels;
                let mut out: Vec<ConvSpec> = self
                    .widths
                    .iter()
                    .map(|&cout| {
                        let s = ConvSpec {
                            cin,
                            cout,
                            k: 5,
                            stride: 1,
                            pad: 0,
                            bn: true,
                        };
                        cin = cout;
                        s
                    })
                    .collect();
                out.push(ConvSpec {
                    cin,
                    cout: 1,
                    k: 5,
                    stride: 1,
                    pad: 0,
                    bn: false,
                });
                out
            }
        }
    }

    /// Smallest accepted input side (Patch) or the exact side (Hr).
    pub fn min_input(&self) -> usize {
        match self.kind {
            DiscriminatorKind::Hr { patch } => patch,
            DiscriminatorKind::Patch => 4 * (self.widths.len() + 1) + 1,
        }
    }
}

struct ConvSpec {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bn: bool,
}

/// Running-statistic updates produced by a training-mode pass.
pub type BnUpdates = Vec<(usize, Array1<f64>, Array1<f64>)>;

/// Convolutional critic. Weights: `c{i}.w` (+ `c{i}.b` when the layer has no
/// batch norm), `bn{i}.g`/`bn{i}.b` with buffers `bn{i}.mean`/`bn{i}.var`,
/// and for the HR variant `fc1.{w,b}`, `fc2.{w,b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub params: Params,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let mut p = Params::default();
        let layers = cfg.layers();
        for (i, l) in layers.iter().enumerate() {
            p.insert(format!("c{i}.w"), init.conv(l.cout, l.cin, l.k, 1.0));
            if l.bn {
                p.insert(format!("bn{i}.g"), filled(&[l.cout], 1.0));
                p.insert(format!("bn{i}.b"), zeros(&[l.cout]));
                p.buffers.insert(format!("bn{i}.mean"), zeros(&[l.cout]));
                p.buffers.insert(format!("bn{i}.var"), filled(&[l.cout], 1.0));
            } else {
                p.insert(format!("c{i}.b"), zeros(&[l.cout]));
            }
        }
        if let DiscriminatorKind::Hr { patch } = cfg.kind {
            let side = patch / 32;
            let flat = layers.last().unwrap().cout * side * side;
            p.insert("fc1.w", init.normal(&[cfg.hidden, flat], (1.0 / flat as f64).sqrt()));
            p.insert("fc1.b", zeros(&[cfg.hidden]));
            p.insert("fc2.w", init.normal(&[1, cfg.hidden], (1.0 / cfg.hidden as f64).sqrt()));
            p.insert("fc2.b", zeros(&[1]));
        }
        Ok(Discriminator { cfg, params: p })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.cfg.channels {
            return Err(Error::shape(format!(
                "discriminator expects N×{}×H×W, got {shape:?}",
                self.cfg.channels
            )));
        }
        let m = self.cfg.min_input();
        match self.cfg.kind {
            DiscriminatorKind::Hr { patch } if shape[2] != patch || shape[3] != patch => Err(Error::shape(format!(
                "HR discriminator configured for {patch}x{patch} patches, got {}x{}",
                shape[2], shape[3]
            ))),
            DiscriminatorKind::Patch if shape[2] < m || shape[3] < m => Err(Error::shape(format!(
                "input {}x{} is smaller than the {m}x{m} receptive field",
                shape[2], shape[3]
            ))),
            _ => Ok(()),
        }
    }

    /// Raw scores: `[N]` for the HR critic, `[N, 1, H', W']` for the patch critic.
    /// In training mode batch statistics are used and their updates returned.
    pub fn score(&self, tape: &Tape, b: &Bound, x: Var, train: bool) -> Result<(Var, BnUpdates)> {
        let shape = tape.shape(x);
        self.check_input(&shape)?;
        let mut updates = Vec::new();
        let layers = self.cfg.layers();
        let last = layers.len() - 1;
        let mut h = x;
        for (i, l) in layers.iter().enumerate() {
            h = tape.reflect_pad(h, l.pad);
            let bias = (!l.bn).then(|| b.get(&format!("c{i}.b")));
            h = tape.conv2d(h, b.get(&format!("c{i}.w")), bias, l.stride);
            if l.bn {
                let (g, be) = (b.get(&format!("bn{i}.g")), b.get(&format!("bn{i}.b")));
                h = if train {
                    let out = tape.batch_norm_train(h, g, be, BN_EPS);
                    updates.push((i, out.batch_mean, out.batch_var));
                    out.y
                } else {
                    let mean = self.running(&format!("bn{i}.mean"))?;
                    let var = self.running(&format!("bn{i}.var"))?;
                    tape.batch_norm_eval(h, g, be, &mean, &var, BN_EPS)
                };
            }
            let patch_head = matches!(self.cfg.kind, DiscriminatorKind::Patch) && i == last;
            if !patch_head {
                h = tape.leaky_relu(h, LRELU);
            }
        }
        if let DiscriminatorKind::Hr { .. } = self.cfg.kind {
            let s = tape.shape(h);
            let flat = tape.reshape(h, &[s[0], s[1] * s[2] * s[3]]);
            let z = tape.linear(flat, b.get("fc1.w"), b.get("fc1.b"));
            let z = tape.leaky_relu(z, LRELU);
            let z = tape.linear(z, b.get("fc2.w"), b.get("fc2.b"));
            h = tape.reshape(z, &[s[0]]);
        }
        Ok((h, updates))
    }

    fn running(&self, name: &str) -> Result<Array1<f64>> {
        self.params
            .buffer(name)?
            .clone()
            .into_dimensionality::<Ix1>()
            .map_err(|_| Error::shape(format!("buffer `{name}` must be 1-d")))
    }

    /// Exponential moving average of batch statistics.
    pub fn apply_bn_updates(&mut self, updates: &BnUpdates, momentum: f64) {
        for (i, mean, var) in updates {
            for (key, stat) in [(format!("bn{i}.mean"), mean), (format!("bn{i}.var"), var)] {
                if let Some(buf) = self.params.buffers.get_mut(&key) {
                    buf.zip_mut_with(&stat.clone().into_dyn(), |r, &s| {
                        *r = (1.0 - momentum) * *r + momentum * s
                    });
                }
            }
        }
    }

    fn eval_batch(&self, img: &ImageTensor) -> Result<crate::autograd::Tensor> {
        self.params.check_finite()?;
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let x = tape.constant(stack_images(&[img])?);
        let (s, _) = self.score(&tape, &b, x, false)?;
        Ok((*tape.value(s)).clone())
    }
}

/// Evaluation-mode score of the HR critic for one image.
pub fn dy_score(d: &Discriminator, candidate: &ImageTensor) -> Result<f64> {
    if !matches!(d.cfg.kind, DiscriminatorKind::Hr { .. }) {
        return Err(Error::invalid("dy_score needs the HR discriminator"));
    }
    Ok(d.eval_batch(candidate)?[[0]])
}

/// Evaluation-mode score map of the patch critic for one image.
pub fn dx_score(d: &Discriminator, candidate: &ImageTensor) -> Result<Array2<f64>> {
    if d.cfg.kind != DiscriminatorKind::Patch {
        return Err(Error::invalid("dx_score needs the patch discriminator"));
    }
    let t = d.eval_batch(candidate)?;
    let (h, w) = (t.shape()[2], t.shape()[3]);
    Ok(t.into_shape_with_order((h, w)).expect("single map"))
}
