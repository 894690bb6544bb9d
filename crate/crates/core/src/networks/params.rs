use std::collections::BTreeMap;

use ndarray::{Array4, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::archive::Archive;
use crate::autograd::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Named parameter arrays of one network, plus non-trainable buffers
/// (batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    pub values: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

/// Parameters placed on a tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    #[cfg(test)]
    pub(crate) fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Collects gradients by parameter name; missing gradients become zeros.
    pub fn grads(&self, tape: &Tape, g: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let grad = g.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).raw_dim()));
                (k.clone(), grad)
            })
            .collect()
    }
}

impl Params {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.values
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing weight `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.values
            .get_mut(name)
            .ok_or_else(|| Error::Format(format!("missing weight `{name}`")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing buffer `{name}`")))
    }

    pub fn count(&self) -> usize {
        self.values.values().map(|t| t.len()).sum()
    }

    /// Places every parameter on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, v) in self.values.iter().chain(&self.buffers) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("weight `{k}`")));
            }
        }
        Ok(())
    }

    /// Writes into `archive` under `prefix`; buffers get a `buf:` marker.
    pub fn store(&self, archive: &mut Archive, prefix: &str) {
        for (k, v) in &self.values {
            archive.insert(format!("{prefix}{k}"), v.clone());
        }
        for (k, v) in &self.buffers {
            archive.insert(format!("{prefix}buf:{k}"), v.clone());
        }
    }

    /// Reads every array under `prefix`, replacing the current contents.
    pub fn restore(archive: &Archive, prefix: &str) -> Params {
        let mut p = Params::default();
        for (k, v) in archive.arrays.range(prefix.to_string()..) {
            let Some(rest) = k.strip_prefix(prefix) else { break };
            match rest.strip_prefix("buf:") {
                Some(b) => p.buffers.insert(b.to_string(), v.clone()),
                None => p.values.insert(rest.to_string(), v.clone()),
            };
        }
        p
    }

    /// Checks that `other` holds the same names and shapes.
    pub fn check_layout(&self, other: &Params) -> Result<()> {
        for (a, b) in [(&self.values, &other.values), (&self.buffers, &other.buffers)] {
            for (k, v) in a {
                match b.get(k) {
                    Some(w) if w.shape() == v.shape() => {}
                    Some(w) => {
                        return Err(Error::shape(format!(
                            "weight `{k}` has shape {:?}, expected {:?}",
                            w.shape(),
                            v.shape()
                        )))
                    }
                    None => return Err(Error::Format(format!("missing weight `{k}`"))),
                }
            }
            if let Some(extra) = b.keys().find(|k| !a.contains_key(*k)) {
                return Err(Error::Format(format!("unexpected weight `{extra}`")));
            }
        }
        Ok(())
    }
}

/// Deterministic weight initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal conv weights `[o, c, k, k]` multiplied by `gain`.
    pub fn conv(&mut self, o: usize, c: usize, k: usize, gain: f64) -> Tensor {
        let std = (2.0 / (c * k * k) as f64).sqrt() * gain;
        self.normal(&[o, c, k, k], std)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(&mut self.rng))
    }
}

pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(IxDyn(shape))
}

pub fn filled(shape: &[usize], v: f64) -> Tensor {
    Tensor::from_elem(IxDyn(shape), v)
}

/// Stacks equally sized images into an NCHW tensor.
pub fn stack_images(images: &[&ImageTensor]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (c, h, w) = first.dim();
    let mut out = Array4::<f64>::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.dim() != (c, h, w) {
            return Err(Error::shape(format!(
                "batch element {i} is {:?}, expected {:?}",
                img.dim(),
                (c, h, w)
            )));
        }
        out.index_axis_mut(Axis(0), i).assign(img.data());
    }
    Ok(out.into_dyn())
}

/// Splits an NCHW tensor into images.
pub fn unstack_images(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let t4 = t
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| Error::shape(format!("expected NCHW tensor, got {:?}", t.shape())))?;
    t4.outer_iter().map(|p| ImageTensor::new(p.to_owned())).collect()
}
