use std::path::Path;

use ndarray::Ix4;

use crate::archive::Archive;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::networks::Init;

/// Maps an NCHW batch to a stack of feature maps.
pub trait FeatureExtractor {
    /// Expected input channels, or `None` for any.
    fn channels(&self) -> Option<usize>;

    fn features(&self, tape: &Tape, x: Var) -> Result<Vec<Var>>;

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        match self.channels() {
            Some(c) if shape.get(1) != Some(&c) => Err(Error::shape(format!(
                "feature extractor expects {c} channels, input has shape {shape:?}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Returns the input itself as the only feature layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn channels(&self) -> Option<usize> {
        None
    }

    fn features(&self, _tape: &Tape, x: Var) -> Result<Vec<Var>> {
        Ok(vec![x])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

/// A stack of reflect-padded convolutions with leaky-ReLU activations; the
/// activation of every layer is one feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFeatureExtractor {
    pub layers: Vec<ConvLayer>,
}

pub const BUILTIN_SEED: u64 = 0x5eed_fea7;
const KIND: &str = "feature-extractor";

impl ConvFeatureExtractor {
    /// The shipped deterministic extractor: 3→16 (stride 1), 16→32 (stride 2),
    /// 32→64 (stride 2), 3×3 kernels, He-normal weights from a fixed seed.
    pub fn builtin() -> Self {
        let mut init = Init::new(BUILTIN_SEED);
        let spec = [(3, 16, 1), (16, 32, 2), (32, 64, 2)];
        ConvFeatureExtractor {
            layers: spec
                .iter()
                .map(|&(c, o, stride)| ConvLayer {
                    weight: init.conv(o, c, 3, 1.0),
                    bias: Tensor::zeros(ndarray::IxDyn(&[o])),
                    stride,
                })
                .collect(),
        }
    }

    /// Keeps only the first `n` layers.
    pub fn truncated(mut self, n: usize) -> Result<Self> {
        if n == 0 || n > self.layers.len() {
            return Err(Error::invalid(format!(
                "cannot keep {n} of {} layers",
                self.layers.len()
            )));
        }
        self.layers.truncate(n);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("feature extractor has no layers"));
        }
        let mut cin = None;
        for (i, l) in self.layers.iter().enumerate() {
            let w = l
                .weight
                .view()
                .into_dimensionality::<Ix4>()
                .map_err(|_| Error::shape(format!("layer {i} weight must be 4-d")))?;
            let (o, c, k, k2) = w.dim();
            if k != k2 || k % 2 == 0 || l.stride == 0 {
                return Err(Error::shape(format!(
                    "layer {i}: kernels must be square and odd, stride positive"
                )));
            }
            if cin.is_some_and(|ci| ci != c) {
                return Err(Error::shape(format!(
                    "layer {i} expects {c} input channels, previous layer gives {}",
                    cin.unwrap()
                )));
            }
            if l.bias.shape() != [o] {
                return Err(Error::shape(format!("layer {i} bias must have {o} entries")));
            }
            cin = Some(o);
        }
        Ok(())
    }

    /// Archive layout: meta `kind = feature-extractor`, `layers = n`,
    /// `layer{i}.stride`; arrays `layer{i}.w` (O×C×k×k) and `layer{i}.b` (O).
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.set_meta("kind", KIND);
        a.set_meta("layers", self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            a.set_meta(format!("layer{i}.stride"), l.stride);
            a.insert(format!("layer{i}.w"), l.weight.clone());
            a.insert(format!("layer{i}.b"), l.bias.clone());
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.meta("kind")? != KIND {
            return Err(Error::Format(format!(
                "archive is a `{}`, not a {KIND}",
                a.meta("kind")?
            )));
        }
        let n: usize = a.meta_as("layers")?;
        let layers = (0..n)
            .map(|i| {
                Ok(ConvLayer {
                    weight: a.array(&format!("layer{i}.w"))?.clone(),
                    bias: a.array(&format!("layer{i}.b"))?.clone(),
                    stride: a.meta_as(&format!("layer{i}.stride"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ext = ConvFeatureExtractor { layers };
        ext.validate()?;
        Ok(ext)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn channels(&self) -> Option<usize> {
        self.layers.first().map(|l| l.weight.shape()[1])
    }

    fn features(&self, tape: &Tape, x: Var) -> Result<Vec<Var>> {
        self.check_input(tape, x)?;
        let mut h = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let pad = l.weight.shape()[2] / 2;
            let s = tape.shape(h);
            if s[2] <= pad || s[3] <= pad {
                return Err(Error::shape(format!(
                    "input {}x{} too small for the feature extractor",
                    s[2], s[3]
                )));
            }
            h = tape.reflect_pad(h, pad);
            let w = tape.constant(l.weight.clone());
            let b = tape.constant(l.bias.clone());
            h = tape.conv2d(h, w, Some(b), l.stride);
            h = tape.leaky_relu(h, 0.2);
            out.push(h);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_is_deterministic_and_round_trips() {
        let a = ConvFeatureExtractor::builtin();
        assert_eq!(a, ConvFeatureExtractor::builtin());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.bin");
        a.save(&p).unwrap();
        assert_eq!(ConvFeatureExtractor::load(&p).unwrap(), a);
        assert_eq!(a.clone().truncated(2).unwrap().layers.len(), 2);
        assert!(a.truncated(4).is_err());
    }

    #[test]
    fn rejects_wrong_channels() {
        let t = Tape::new();
        let x = t.constant(Tensor::zeros(ndarray::IxDyn(&[1, 1, 8, 8])));
        assert!(ConvFeatureExtractor::builtin().features(&t, x).is_err());
        assert_eq!(IdentityExtractor.features(&t, x).unwrap(), vec![x]);
    }
}
