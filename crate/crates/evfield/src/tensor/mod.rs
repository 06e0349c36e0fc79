//! Dense multidimensional arrays with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after construction; every operation builds a fresh
//! node in a define-by-run graph. Calling [`Tensor::backward`] on a scalar
//! walks the graph in reverse topological order and accumulates gradients
//! into each `requires_grad` node. Layout is row-major, broadcasting follows
//! the trailing-dimension rule, and all arithmetic is f64.

mod ops;

pub use ops::gelu_scalar;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0:?} is not broadcastable with {1:?}")]
    Broadcast(Vec<usize>, Vec<usize>),
    #[error("matmul inner dimensions disagree: {0:?} x {1:?}")]
    MatmulShape(Vec<usize>, Vec<usize>),
    #[error("kernel of length {kernel} longer than padded input {padded}")]
    KernelTooLong { kernel: usize, padded: usize },
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("{0} requires {1} input, got value {2}")]
    DomainError(&'static str, &'static str, f64),
    #[error("cannot l2-normalize a zero vector")]
    ZeroNorm,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid axis {axis} for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: RefCell<Option<Vec<f64>>>,
    pub(crate) op: Option<ops::Op>,
}

/// A dense row-major array participating in a reverse-mode graph.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Option<ops::Op>) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Leaf tensor that does not track gradients.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::BadLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::new(data, shape.to_vec(), false, None))
    }

    /// Leaf parameter: tracks gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::BadLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::new(data, shape.to_vec(), true, None))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![v], vec![1], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; shape.iter().product()], shape.to_vec(), false, None)
    }

    pub(crate) fn result(data: Vec<f64>, shape: Vec<usize>, op: ops::Op) -> Tensor {
        let rg = op.parents().iter().any(|p| p.inner.requires_grad);
        let op = if rg { Some(op) } else { None };
        Tensor::new(data, shape, rg, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Same data, detached from the graph, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.inner.data.clone(), self.inner.shape.clone(), false, None)
    }

    /// Reverse-mode gradient accumulation from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        // Post-order DFS, iterative to keep deep graphs off the call stack.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.inner.id) {
                continue;
            }
            let parents: Vec<Tensor> = match &t.inner.op {
                Some(op) => op.parents(),
                None => Vec::new(),
            };
            stack.push((t, true));
            for p in parents {
                if !visited.contains(&p.inner.id) {
                    stack.push((p, false));
                }
            }
        }
        // Scratch gradients for this pass; persisted grads only receive the sum.
        let mut flow: std::collections::HashMap<u64, Vec<f64>> = std::collections::HashMap::new();
        flow.insert(self.inner.id, vec![1.0]);
        for t in order.iter().rev() {
            if !t.inner.requires_grad {
                continue;
            }
            let g = match flow.get(&t.inner.id) {
                Some(g) => g.clone(),
                None => continue,
            };
            {
                let mut slot = t.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g.clone()),
                }
            }
            if let Some(op) = &t.inner.op {
                op.accumulate_parent_grads(t, &g, &mut flow);
            }
        }
        Ok(())
    }
}

pub(crate) fn accumulate(flow: &mut std::collections::HashMap<u64, Vec<f64>>, t: &Tensor, g: Vec<f64>) {
    if !t.inner.requires_grad {
        return;
    }
    match flow.get_mut(&t.inner.id) {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        None => {
            flow.insert(t.inner.id, g);
        }
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
