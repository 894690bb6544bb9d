use std::collections::BTreeMap;

use crate::archive::Archive;
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::networks::Params;

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Updates every parameter that has a gradient.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient of `{name}` has shape {:?}, weight {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
        Ok(())
    }

    pub fn store(&self, a: &mut Archive, prefix: &str) {
        a.set_meta(format!("{prefix}t"), self.t);
        a.set_meta(
            format!("{prefix}betas"),
            format!("{:?},{:?},{:?}", self.beta1, self.beta2, self.eps),
        );
        for (k, m) in &self.m {
            a.insert(format!("{prefix}m:{k}"), m.clone());
        }
        for (k, v) in &self.v {
            a.insert(format!("{prefix}v:{k}"), v.clone());
        }
    }

    pub fn restore(a: &Archive, prefix: &str) -> Result<Self> {
        let betas: Vec<f64> = a
            .meta(&format!("{prefix}betas"))?
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Format(format!("bad optimizer constants `{s}`")))
            })
            .collect::<Result<_>>()?;
        let [beta1, beta2, eps] = betas[..] else {
            return Err(Error::Format("optimizer needs three constants".into()));
        };
        let mut opt = Adam::new(beta1, beta2, eps);
        opt.t = a.meta_as(&format!("{prefix}t"))?;
        for (tag, map) in [("m:", &mut opt.m), ("v:", &mut opt.v)] {
            let p = format!("{prefix}{tag}");
            for (k, arr) in a.arrays.range(p.clone()..) {
                let Some(name) = k.strip_prefix(&p) else { break };
                map.insert(name.to_string(), arr.clone());
            }
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Params::default();
        p.insert("w", arr1(&[1.0, -2.0, 0.5]).into_dyn());
        let g: BTreeMap<_, _> = [("w".to_string(), arr1(&[3.0, -0.1, 0.0]).into_dyn())].into();
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        opt.step(&mut p, &g, 0.01).unwrap();
        let w = p.get("w").unwrap();
        assert!((w[[0]] - 0.99).abs() < 1e-9);
        assert!((w[[1]] + 1.99).abs() < 1e-6);
        assert_eq!(w[[2]], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic_and_round_trips() {
        let mut p = Params::default();
        p.insert("w", Tensor::from_elem(IxDyn(&[2]), 3.0));
        let mut opt = Adam::new(0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = p.get("w").unwrap().mapv(|w| 2.0 * (w - 1.0));
            opt.step(&mut p, &[("w".to_string(), g)].into(), 0.05).unwrap();
        }
        assert!(p.get("w").unwrap().iter().all(|w| (w - 1.0).abs() < 1e-3));
        let mut a = Archive::new();
        opt.store(&mut a, "opt.");
        assert_eq!(Adam::restore(&a, "opt.").unwrap(), opt);
    }
}
