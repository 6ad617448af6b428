//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) to a node holding its data, an
//! optional gradient slot and the operation that produced it. Every forward
//! op records its inputs, so calling [`Tensor::backward`] on a scalar walks the
//! graph in reverse creation order and accumulates gradients into every leaf
//! created with [`Tensor::param`].
//!
//! Nodes are numbered from a global counter at construction. Inputs always
//! exist before their consumers, so sorting reachable nodes by descending id
//! is a valid reverse topological order and the graph is acyclic by
//! construction.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub mod checkpoint;
pub mod grad_check;
mod gru;
pub mod kinks;
mod ops;

pub use checkpoint::{Checkpoint, StoredTensor};
pub use grad_check::{
    grad_check, grad_check_against, GradCheckOptions, GradReport, GradSample, ParamGradStats,
};
pub use ops::Reduction;

/// Floating point element type. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// `c = a·b + beta·c` where `c` is a contiguous row-major `m×n` buffer
    /// and `a`, `b` are read through (row, column) strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real to f64")
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a: usize,
    sa: (usize, usize),
    b: usize,
    sb: (usize, usize),
    c: usize,
) {
    assert!(m > 0 && k > 0 && n > 0, "gemm with empty dimension");
    assert!(
        (m - 1) * sa.0 + (k - 1) * sa.1 < a,
        "gemm lhs out of bounds"
    );
    assert!(
        (k - 1) * sb.0 + (n - 1) * sb.1 < b,
        "gemm rhs out of bounds"
    );
    assert!(m * n <= c, "gemm output out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $name:expr, $gemm:path) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_bounds(m, k, n, a.len(), a_strides, b.len(), b_strides, c.len());
                // SAFETY: every index touched is bounds-checked above and the
                // output does not alias the inputs (distinct borrows).
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

pub(crate) struct Node<F: Real> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: bool,
    op: ops::Op<F>,
}

/// Handle to a node in the computation graph. Cloning is cheap and shares
/// the node.
pub struct Tensor<F: Real = f32>(Rc<Node<F>>);

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<F> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

/// Owned, lineage-free copy of a tensor's contents. Unlike [`Tensor`] it is
/// `Send`, so parameter snapshots can cross threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Tensor<F> {
    pub(crate) fn from_op(data: Vec<F>, shape: Vec<usize>, op: ops::Op<F>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        // Ops over constants keep no lineage.
        let op = if requires_grad { op } else { ops::Op::Leaf };
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    fn leaf(data: Vec<F>, shape: Vec<usize>, requires_grad: bool) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op: ops::Op::Leaf,
        })))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Trainable leaf: gradients accumulate into it on backward.
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape.to_vec(), true)
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| F::lit(v)).collect(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self::new(vec![value; numel(shape)], shape).expect("valid shape")
    }

    pub fn scalar(value: F) -> Self {
        Self::full(&[1], value)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![F::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = F::one();
        }
        Self::new(data, &[n, n]).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    /// Size of `axis`; panics when out of range.
    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn data(&self) -> Ref<'_, Vec<F>> {
        self.0.data.borrow()
    }

    /// Mutable access to the raw buffer. Meant for optimizers and
    /// perturbation-based checks on leaves; mutating a tensor that
    /// downstream nodes were computed from invalidates those nodes.
    pub fn data_mut(&self) -> RefMut<'_, Vec<F>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> F {
        assert_eq!(index.len(), self.rank(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &d)) in index.iter().zip(self.shape()).enumerate() {
            assert!(ix < d, "index {ix} out of range on axis {i}");
            flat = flat * d + ix;
        }
        self.0.data.borrow()[flat]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True when the tensor was produced by a recorded op.
    pub fn has_lineage(&self) -> bool {
        !matches!(self.0.op, ops::Op::Leaf)
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same contents, no lineage, no gradient.
    pub fn detach(&self) -> Self {
        Self::new(self.to_vec(), self.shape()).expect("valid shape")
    }

    /// Same contents in another precision, keeping the trainable flag.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        let data: Vec<G> = self.data().iter().map(|v| G::lit(v.as_f64())).collect();
        Tensor::leaf(data, self.shape().to_vec(), self.requires_grad()).expect("valid shape")
    }

    pub fn snapshot(&self) -> TensorData<F> {
        TensorData {
            shape: self.shape().to_vec(),
            data: self.to_vec(),
        }
    }

    pub fn same_node(&self, other: &Tensor<F>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn accumulate_grad(&self, g: &[F]) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a one-element tensor. Gradients add onto
    /// whatever the leaves already hold, so call [`Tensor::zero_grad`] on
    /// parameters between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage(
                "backward() on a tensor without trainable inputs".into(),
            ));
        }

        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            for input in t.0.op.inputs() {
                if input.requires_grad() && !seen.contains(&input.0.id) {
                    stack.push(input.clone());
                }
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.0.id));

        self.accumulate_grad(&[F::one()]);
        for node in &order {
            if !node.has_lineage() {
                continue;
            }
            // Intermediate gradients are released once propagated.
            let Some(g) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            ops::backward_op(node, &g);
        }
        Ok(())
    }
}

impl<F: Real> TensorData<F> {
    pub fn into_tensor(self, trainable: bool) -> Result<Tensor<F>> {
        Tensor::leaf(self.data, self.shape, trainable)
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) so that element
/// `(o, i, k)` sits at `(o * len + i) * inner + k`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
