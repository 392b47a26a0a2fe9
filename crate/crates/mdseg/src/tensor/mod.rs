//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are reference-counted handles onto a mutable node. Every
//! differentiable operation records its parents and a backward closure;
//! [`backward`] replays the graph in reverse topological order and
//! accumulates `d(loss)/d(node)` into each node that requires gradients.
//!
//! The engine is deliberately small: f64 storage, CPU only, single graph
//! per thread. Deterministic by construction — kernels may parallelize
//! over the batch axis but every output element is produced by exactly
//! one task, so repeated runs are bit-identical.

mod adam;
mod linalg;
pub mod ops;

pub use adam::AdamState;
pub use ops::Padding;
pub(crate) use linalg::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc};

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

/// Errors raised by tensor construction and tensor operations.
#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} values, got {got}")]
    ValueCountMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: size mismatch on {axis} axis (expected {expected}, got {got})")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank-{expected} input, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {axis} extent must be even, got {got}")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        got: usize,
    },
    #[error("{op}: extents must be positive, got shape {shape:?}")]
    EmptyExtent { op: &'static str, shape: Vec<usize> },
    #[error("{op}: kernel extents must be odd for same-padding, got {kh}x{kw}")]
    EvenKernel { op: &'static str, kh: usize, kw: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("adam: parameter {index} has {param_len} values but state tracks {state_len}")]
    OptimizerShapeMismatch {
        index: usize,
        param_len: usize,
        state_len: usize,
    },
}

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Handle onto a node of the differentiation graph.
///
/// Cloning a `Tensor` clones the handle, not the storage; parameters stay
/// shared across every forward pass that uses them.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Node>>,
}

thread_local! {
    static NO_GRAD_DEPTH: std::cell::Cell<u32> = const { std::cell::Cell::new(0) };
}

/// Runs `f` with graph recording disabled: ops executed inside produce
/// plain value nodes with no parents. Used by inference paths.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let out = f();
    NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    out
}

pub(crate) fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get()) == 0
}

impl Tensor {
    /// Builds a tensor from row-major values.
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Tensor, TensorError> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(TensorError::ValueCountMismatch {
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Self::leaf(shape.to_vec(), values, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![0.0; n], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![value; n], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Marks this tensor as a trainable leaf and returns it.
    pub fn requires_grad(self) -> Tensor {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    fn leaf(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                shape,
                values,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad_flag());
        if !track {
            return Self::leaf(shape, values, false);
        }
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                shape,
                values,
                grad: None,
                requires_grad: true,
                parents,
                backward: Some(backward),
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the stored values.
    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let n = self.inner.borrow();
        debug_assert_eq!(n.values.len(), 1, "item() on non-scalar tensor");
        n.values[0]
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Copy of the accumulated gradient, if any backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrites the stored values in place; shape must match.
    pub fn set_values(&self, values: &[f64]) -> Result<(), TensorError> {
        let mut n = self.inner.borrow_mut();
        if values.len() != n.values.len() {
            return Err(TensorError::ValueCountMismatch {
                shape: n.shape.clone(),
                expected: n.values.len(),
                got: values.len(),
            });
        }
        n.values.copy_from_slice(values);
        Ok(())
    }

    /// Value copy detached from the graph.
    pub fn detach(&self) -> Tensor {
        let n = self.inner.borrow();
        Self::leaf(n.shape.clone(), n.values.clone(), false)
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut n = self.inner.borrow_mut();
        match &mut n.grad {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => n.grad = Some(g.to_vec()),
        }
    }

    /// Like [`Self::accumulate_grad`] but takes ownership, avoiding a copy
    /// when this is the first contribution.
    pub(crate) fn accumulate_grad_owned(&self, g: Vec<f64>) {
        let mut n = self.inner.borrow_mut();
        match &mut n.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => n.grad = Some(g),
        }
    }

    /// Read access to values without cloning; the borrow must not outlive
    /// the closure (ops and backward take their own borrows).
    pub(crate) fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().values)
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

/// Accumulates `d(loss)/d(node)` into every gradient-requiring ancestor of
/// `loss`. Repeated calls without [`Tensor::zero_grad`] keep accumulating.
pub fn backward(loss: &Tensor) -> Result<(), TensorError> {
    let shape = loss.shape();
    if shape.iter().product::<usize>() != 1 {
        return Err(TensorError::NonScalarLoss { shape });
    }
    // Post-order over parent edges; reversed, every node is processed
    // before its parents, so each node's grad is complete when visited.
    let mut order: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    seen.insert(loss.ptr_id());
    while let Some((node, child_idx)) = stack.pop() {
        let parent = {
            let n = node.inner.borrow();
            n.parents.get(child_idx).cloned()
        };
        match parent {
            Some(p) => {
                stack.push((node, child_idx + 1));
                if seen.insert(p.ptr_id()) {
                    stack.push((p, 0));
                }
            }
            None => order.push(node),
        }
    }

    loss.accumulate_grad(&[1.0]);
    for node in order.iter().rev() {
        let grad_copy = {
            let n = node.inner.borrow();
            if n.backward.is_none() {
                continue;
            }
            match &n.grad {
                Some(g) => g.clone(),
                None => continue,
            }
        };
        let n = node.inner.borrow();
        if let Some(f) = &n.backward {
            f(&grad_copy);
        }
    }
    // Interior nodes release their grads; only leaves accumulate across
    // repeated backward calls.
    for node in &order {
        let mut n = node.inner.borrow_mut();
        if n.backward.is_some() {
            n.grad = None;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::{mul_scalar, sum_all};

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::from_vec(&[2, 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::ValueCountMismatch { .. }));
    }

    #[test]
    fn backward_of_scaled_sum() {
        // loss = sum(2*x), x = [1, 2] -> grad [2, 2]
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
        let loss = sum_all(&mul_scalar(&x, 2.0));
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
        let y = mul_scalar(&x, 2.0);
        let err = backward(&y).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
        let loss = sum_all(&mul_scalar(&x, 2.0));
        backward(&loss).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 4.0]);
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
        let y = no_grad(|| mul_scalar(&x, 2.0));
        assert!(!y.requires_grad_flag());
    }

    #[test]
    fn shared_node_gets_summed_contributions() {
        // loss = sum(x*2) + sum(x*3) -> grad 5 everywhere
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad();
        let a = sum_all(&mul_scalar(&x, 2.0));
        let b = sum_all(&mul_scalar(&x, 3.0));
        let loss = crate::tensor::ops::add(&a, &b).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0, 5.0, 5.0]);
    }
}
