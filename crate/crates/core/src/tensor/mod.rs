//! Dense row-major `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every operation allocates a fresh output buffer and, when any input
//! requires a gradient, records a backward closure on the output node.
//! Calling [`Tensor::backward`] on a scalar walks the recorded graph in
//! reverse topological order and accumulates gradients into the leaves.

mod checkpoint;
mod conv;
pub mod gradcheck;
pub(crate) mod kernels;
mod nn;
mod ops;
mod params;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointEntry, EntryKind, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::{
    read_f64s, read_header, read_string, read_u32, write_f64s, write_header, write_string,
};
pub use nn::{BatchNormMode, BatchStats};
pub use params::ParamStore;
pub(crate) use ops::sigmoid;

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
    op: &'static str,
}

/// Reference-counted handle to an immutable tensor node.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
        op: &'static str,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                data,
                shape,
                requires_grad,
                grad: RefCell::new(None),
                grad_fn,
                op,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::validate(&data, shape)?;
        Ok(Self::make(data, shape.to_vec(), false, None, "leaf"))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::validate(&data, shape)?;
        Ok(Self::make(data, shape.to_vec(), true, None, "leaf"))
    }

    fn validate(data: &[f64], shape: &[usize]) -> Result<()> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("new", format!("dimensions must be positive, got {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(vec![0.0; numel(shape)], shape.to_vec(), false, None, "leaf")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::make(vec![value; numel(shape)], shape.to_vec(), false, None, "leaf")
    }

    pub fn scalar(value: f64) -> Self {
        Self::make(vec![value], vec![1], false, None, "leaf")
    }

    /// Output of a differentiable operation. `backward` maps the output
    /// gradient to one optional gradient per parent.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.to_string()));
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Ok(Self::make(data, shape, requires_grad, grad_fn, op))
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.node.data[0]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.clone()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.node.data.clone(), self.node.shape.clone(), false, None, "leaf")
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    fn id(&self) -> *const Node {
        Rc::as_ptr(&self.node)
    }

    /// Reverse-mode pass from a one-element tensor. Gradients of leaves
    /// accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS gives a topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashMap<*const Node, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(t.id(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.node.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains_key(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.node.grad_fn {
                Some(gf) => {
                    let parent_grads = (gf.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for (p, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "grad size from {}", t.node.op);
                        match grads.get_mut(&p.id()) {
                            Some(acc) => kernels::add_assign(acc, &pg),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
                None => {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("backward".into()));
                    }
                    let mut slot = t.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => kernels::add_assign(acc, &g),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("op", &self.node.op)
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_shape() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::new(vec![], &[0]).is_err());
        assert!(Tensor::new(vec![f64::NAN], &[1]).is_err());
        let t = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert!(!t.requires_grad());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::param(vec![1.0, -2.0, 3.5], &[3]).unwrap();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum_is_twice_input() {
        let x = Tensor::param(vec![1.0, -2.0, 3.5], &[3]).unwrap();
        x.mul(&x).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 7.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(x.relu().unwrap().backward().is_err());
    }

    #[test]
    fn shared_subgraph_gradients_add_up() {
        // y = x*x + x  => dy/dx = 2x + 1
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn constants_do_not_record_graph() {
        let a = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.mul(&a).unwrap();
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
    }
}
