//! A small reverse-mode automatic differentiation tape over `f64` tensors.
//!
//! Every op records its output value and a closure mapping the output
//! gradient to gradients of its parents. Nodes that cannot reach a
//! trainable leaf are never differentiated. Tensors are NCHW where images
//! are involved; scalars are 0-d arrays.

mod conv;
mod ops;

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

pub use conv::{col2im, conv2d_forward, conv_transpose2d_forward, im2col};
pub use ops::{sigmoid, BatchNormOut};

pub type Tensor = ArrayD<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Receives the output gradient and a per-parent "needs gradient" mask.
type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub fn scalar(v: f64) -> Tensor {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, requires_grad: bool, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var(nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), true, None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), false, None)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar_value on tensor of shape {:?}", val.shape());
        *val.iter().next().unwrap()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an op output; `backward` is dropped when no parent needs a gradient.
    pub(crate) fn record(&self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let rg = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push(value, parents.iter().map(|p| p.0).collect(), rg, Some(backward))
    }

    /// Reverse pass from `root`, seeded with ones of its shape.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::ones(nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let pg = bw(&g, &mask);
            grads[i] = Some(g);
            for ((&p, pgrad), need) in node.parents.iter().zip(pg).zip(mask) {
                if !need {
                    continue;
                }
                if let Some(pgrad) = pgrad {
                    match &mut grads[p] {
                        Some(acc) => *acc += &pgrad,
                        slot @ None => *slot = Some(pgrad),
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Finite-difference verification of tape gradients.
pub mod gradcheck {
    use super::*;

    /// Central-difference check of `d f / d inputs` against the tape.
    ///
    /// `build` must construct the scalar output from the given leaves on a
    /// fresh tape. Returns the worst relative error `‖g − fd‖ / max(‖fd‖, floor)`
    /// over all inputs.
    pub fn check(inputs: &[Tensor], h: f64, build: impl Fn(&Tape, &[Var]) -> Var) -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&tape, &vars);
        let grads = tape.backward(out);
        let eval = |perturbed: &[Tensor]| {
            let t = Tape::new();
            let vs: Vec<Var> = perturbed.iter().map(|x| t.param(x.clone())).collect();
            let o = build(&t, &vs);
            t.scalar_value(o)
        };
        let mut worst: f64 = 0.0;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[k])
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));
            let mut fd = ArrayD::zeros(input.raw_dim());
            for idx in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[k].as_slice_mut().unwrap()[idx] += h;
                let mut minus = inputs.to_vec();
                minus[k].as_slice_mut().unwrap()[idx] -= h;
                fd.as_slice_mut().unwrap()[idx] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            let diff = (&analytic - &fd).mapv(|v| v * v).sum().sqrt();
            let scale = fd.mapv(|v| v * v).sum().sqrt().max(1e-8);
            worst = worst.max(diff / scale);
        }
        worst
    }
}
