//! Reverse-mode automatic differentiation over dynamically-shaped f64 arrays.
//!
//! Every differentiable computation in the codec (transforms, warping,
//! attention, rate estimation, losses) is expressed as a graph of [`Tensor`]
//! nodes. A node owns its forward value; `backward()` walks the graph in
//! reverse creation order and accumulates gradients into every node that
//! requires them. Graphs are rebuilt per step (define-by-run), so training
//! code never has to declare shapes up front.

mod conv;
mod ops;
mod resample;
mod warp;

pub use conv::{Conv2dSpec, ConvT2dSpec};

use ndarray::{ArrayD, IxDyn};
use std::cell::{Cell, RefCell};
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn fresh_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Gradient contributions for each parent, in parent order. `None` means the
/// parent receives no gradient from this node (e.g. a constant operand).
type BackwardFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<Option<ArrayD<f64>>>>;

pub(crate) struct Node {
    id: usize,
    value: ArrayD<f64>,
    grad: RefCell<Option<ArrayD<f64>>>,
    needs_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A value in the autodiff graph. Cloning is cheap (shared node).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Node>,
}

impl Tensor {
    pub fn from_array(value: ArrayD<f64>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                value,
                grad: RefCell::new(None),
                needs_grad: requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    pub fn constant(value: ArrayD<f64>) -> Self {
        Self::from_array(value, false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub(crate) fn from_op(value: ArrayD<f64>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        let needs_grad = parents.iter().any(|p| p.inner.needs_grad);
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                value,
                grad: RefCell::new(None),
                needs_grad,
                parents,
                backward: if needs_grad { Some(backward) } else { None },
            }),
        }
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.inner.value
    }

    pub fn shape(&self) -> &[usize] {
        self.inner.value.shape()
    }

    /// Scalar extraction; panics if the tensor is not 0-d or single-element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.inner.value.len(), 1, "item() on non-scalar tensor");
        *self.inner.value.iter().next().unwrap()
    }

    pub fn grad(&self) -> Option<ArrayD<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.needs_grad
    }

    /// A new leaf sharing this tensor's value but cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.inner.value.clone())
    }

    /// Backpropagate from this (scalar) tensor with seed gradient 1.
    pub fn backward(&self) {
        assert_eq!(self.inner.value.len(), 1, "backward() requires a scalar loss");
        let seed = ArrayD::from_elem(self.inner.value.raw_dim(), 1.0);
        self.backward_with(seed);
    }

    /// Backpropagate with an explicit seed gradient of this tensor's shape.
    pub fn backward_with(&self, seed: ArrayD<f64>) {
        assert_eq!(seed.shape(), self.inner.value.shape());
        if !self.inner.needs_grad {
            return;
        }
        // Parents are always created before children, so descending-id order
        // is a valid reverse topological order.
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.inner.needs_grad || !seen.insert(t.inner.id) {
                continue;
            }
            for p in &t.inner.parents {
                stack.push(p.clone());
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.inner.id.cmp(&a.inner.id));

        accumulate(&self.inner, seed);
        for node in &nodes {
            let Some(backward) = node.inner.backward.as_ref() else {
                continue;
            };
            let grad_out = node.inner.grad.borrow().clone();
            let Some(grad_out) = grad_out else { continue };
            let contributions = backward(&grad_out);
            debug_assert_eq!(contributions.len(), node.inner.parents.len());
            for (parent, contrib) in node.inner.parents.iter().zip(contributions) {
                if let Some(g) = contrib {
                    if parent.inner.needs_grad {
                        accumulate(&parent.inner, g);
                    }
                }
            }
        }
    }

    /// Clears this node's accumulated gradient (used by leaves between steps).
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }
}

fn accumulate(node: &Node, g: ArrayD<f64>) {
    debug_assert_eq!(g.shape(), node.value.shape(), "gradient shape mismatch");
    let mut slot = node.grad.borrow_mut();
    match slot.as_mut() {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn chain_and_fanout_accumulation() {
        let x = Tensor::from_array(arr1(&[2.0, -3.0]).into_dyn(), true);
        // y = sum(x*x + x) -> dy/dx = 2x + 1
        let y = x.mul(&x).add(&x).sum();
        y.backward();
        let g = x.grad().unwrap();
        assert_eq!(g.as_slice().unwrap(), &[5.0, -5.0]);
    }

    #[test]
    fn constants_receive_no_grad() {
        let x = Tensor::from_array(arr1(&[1.0]).into_dyn(), true);
        let c = Tensor::constant(arr1(&[4.0]).into_dyn());
        let y = x.mul(&c).sum();
        y.backward();
        assert_eq!(x.grad().unwrap()[[0]], 4.0);
        assert!(c.grad().is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::from_array(arr1(&[3.0]).into_dyn(), true);
        let y = x.mul(&x).detach().mul(&x).sum();
        y.backward();
        // only the outer factor sees gradient: d(9*x)/dx = 9
        assert_eq!(x.grad().unwrap()[[0]], 9.0);
    }
}
