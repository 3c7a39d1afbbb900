//! Dense NCHW tensors with reverse-mode automatic differentiation.
//!
//! Every op produces a new immutable [`Tensor`]. When any input requires a
//! gradient, the output records its parents and a backward closure; calling
//! [`Tensor::backward`] on a scalar walks that graph in reverse topological
//! order and accumulates gradients into the leaves that asked for them.
//!
//! The element type is generic so the same model code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod gemm;
pub mod gradcheck;
mod nn;
mod ops;
mod optim;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{shape_err, Result};

pub use nn::{conv2d_output_size, Conv2dSpec};
pub use optim::{adam_step, AdamConfig, AdamState};

/// Scalar types the engine can compute with.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

/// Storage tag, also used by the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Gradient closure: receives the output gradient, the parents and the
/// forward output, and returns one optional gradient per parent.
pub type BackwardFn<E> =
    Box<dyn Fn(&[E], &[Tensor<E>], &[E]) -> Vec<Option<Vec<E>>> + Send + Sync>;

struct GradFn<E: Element> {
    parents: Vec<Tensor<E>>,
    backward: BackwardFn<E>,
}

struct Node<E: Element> {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
    grad_fn: Option<GradFn<E>>,
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

/// A dense tensor. Cloning is cheap and shares the underlying node.
pub struct Tensor<E: Element = f32> {
    node: Arc<Node<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("leaf", &self.is_leaf())
            .finish()
    }
}

impl<E: Element> Tensor<E> {
    fn make(
        shape: Vec<usize>,
        data: Arc<Vec<E>>,
        requires_grad: bool,
        grad_fn: Option<GradFn<E>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel,
                data.len()
            ));
        }
        Ok(Self::make(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Trainable leaf.
    pub fn parameter(shape: &[usize], data: Vec<E>) -> Result<Self> {
        Ok(Self::from_vec(shape, data)?.requires_grad(true))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| E::from_f64_lossy(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self::make(shape.to_vec(), Arc::new(vec![value; numel]), false, None)
    }

    pub fn scalar(value: E) -> Self {
        Self::full(&[1], value)
    }

    /// New leaf with the same data and the given gradient flag.
    pub fn requires_grad(self, flag: bool) -> Self {
        Self::make(self.node.shape.clone(), Arc::clone(&self.node.data), flag, None)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::make(
            self.node.shape.clone(),
            Arc::clone(&self.node.data),
            false,
            None,
        )
    }

    /// Builds the output of a custom differentiable op. The backward closure
    /// is only retained when at least one parent tracks gradients.
    pub fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: BackwardFn<E>,
    ) -> Self {
        let tracked = parents.iter().any(|p| p.node.requires_grad);
        let grad_fn = tracked.then(|| GradFn { parents, backward });
        Self::make(shape, Arc::new(data), tracked, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.node.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err!("expected a rank-4 tensor, got {:?}", self.node.shape)),
        }
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.node.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn tracks_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Identity of the underlying node; clones share it.
    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    /// Replaces the values of a leaf, keeping its gradient flag. Used by
    /// optimizers; the previous node is left untouched for any graph that
    /// still references it.
    pub fn set_data(&mut self, data: Vec<E>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(shape_err!(
                "set_data: expected {} values, got {}",
                self.numel(),
                data.len()
            ));
        }
        let grad = self.grad();
        *self = Self::make(
            self.node.shape.clone(),
            Arc::new(data),
            self.node.requires_grad,
            None,
        );
        *self.node.grad.lock().expect("grad lock") = grad;
        Ok(())
    }

    /// Casts to another element type as a constant (untracked) tensor.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::make(
            self.node.shape.clone(),
            Arc::new(
                self.node
                    .data
                    .iter()
                    .map(|v| F::from_f64_lossy(v.to_f64_lossy()))
                    .collect(),
            ),
            false,
            None,
        )
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// leaf that requires them; call [`Tensor::zero_grad`] between sweeps
    /// to start fresh.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            ));
        }
        if !self.node.requires_grad {
            return Ok(());
        }

        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<E>> = HashMap::new();
        grads.insert(self.node.id, vec![E::one()]);

        for tensor in order.iter().rev() {
            let Some(grad_out) = grads.remove(&tensor.node.id) else {
                continue;
            };
            match &tensor.node.grad_fn {
                None => {
                    let mut slot = tensor.node.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad_out).for_each(|(a, g)| *a = *a + *g),
                        None => *slot = Some(grad_out),
                    }
                }
                Some(grad_fn) => {
                    let parent_grads =
                        (grad_fn.backward)(&grad_out, &grad_fn.parents, &tensor.node.data);
                    debug_assert_eq!(parent_grads.len(), grad_fn.parents.len());
                    for (parent, g) in grad_fn.parents.iter().zip(parent_grads) {
                        let Some(g) = g else { continue };
                        if !parent.node.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(g.len(), parent.numel());
                        match grads.get_mut(&parent.node.id) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                            None => {
                                grads.insert(parent.node.id, g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph (parents before children).
    fn topo_order(&self) -> Vec<Tensor<E>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<E>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.node.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(grad_fn) = &t.node.grad_fn {
                for p in &grad_fn.parents {
                    if p.node.requires_grad && !visited.contains(&p.node.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
