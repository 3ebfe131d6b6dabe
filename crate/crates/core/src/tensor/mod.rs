//! N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record a graph node pointing at their
//! inputs; [`backward`] walks that graph once in reverse topological order
//! and returns a [`GradientMap`] keyed by leaf tensor id.

mod autograd;
pub(crate) mod kernels;
mod ops;
mod scalar;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use autograd::{backward, GradientMap};
pub use scalar::{DType, Scalar};

use crate::error::{shape_err, Result};
use crate::rng::Stream;

/// Process-unique tensor identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

impl TensorId {
    fn fresh() -> Self {
        TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// Gradient function of one recorded operation: maps the output gradient to
/// one optional gradient per input. `needs[i]` is false when input `i` does
/// not require a gradient, in which case the function may return `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct Node<T: Scalar> {
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: TensorId,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// Immutable n-dimensional array, row-major.
pub struct Tensor<T: Scalar = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.inner.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.inner.requires_grad);
        if self.numel() <= 16 {
            s.field("data", &self.inner.data);
        }
        s.finish()
    }
}

/// Initial contents for [`Tensor::create`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

fn check_dims(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(shape_err!("all dimensions must be >= 1, got {shape:?}"));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    /// Leaf tensor from an owned buffer.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let n = check_dims(shape)?;
        if n != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {n} elements but buffer has {}",
                data.len()
            ));
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Leaf tensor from f64 values, converted to `T`.
    pub fn from_f64s(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    /// One-element tensor of shape `[1]`.
    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![T::from_f64(v)], vec![1], false)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Constant(0.0), 0)
    }

    /// Deterministic construction from a fill rule and a seed. The seed is
    /// ignored for constant fills.
    pub fn create(shape: &[usize], fill: Fill, seed: u64) -> Result<Self> {
        let n = check_dims(shape)?;
        let data = match fill {
            Fill::Constant(c) => vec![T::from_f64(c); n],
            Fill::Uniform { lo, hi } => {
                let mut s = Stream::new(seed);
                (0..n).map(|_| T::from_f64(s.uniform(lo, hi))).collect()
            }
            Fill::Normal { mean, std } => {
                let mut s = Stream::new(seed);
                (0..n).map(|_| T::from_f64(s.normal(mean, std))).collect()
            }
        };
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    pub(crate) fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Self::leaf_shared(Arc::new(data), shape, requires_grad)
    }

    fn leaf_shared(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId::fresh(),
                shape,
                data,
                requires_grad,
                node: None,
            }),
        }
    }

    /// Result of an operation. A graph node is attached only when some input
    /// requires a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node { inputs, backward });
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId::fresh(),
                shape,
                data: Arc::new(data),
                requires_grad,
                node,
            }),
        }
    }

    /// Whether gradients flow to or through this tensor.
    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// A new leaf over the same buffer, without graph history.
    pub fn with_requires_grad(&self, flag: bool) -> Self {
        Self::leaf_shared(Arc::clone(&self.inner.data), self.inner.shape.clone(), flag)
    }

    /// Leaf copy without gradient tracking.
    pub fn detach(&self) -> Self {
        if !self.requires_grad() && self.inner.node.is_none() {
            return self.clone();
        }
        self.with_requires_grad(false)
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.to_vec()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape()));
        }
        Ok(self.inner.data[0])
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    /// Bitwise equality of shape and contents.
    pub fn bitwise_eq(&self, other: &Tensor<T>) -> bool {
        let bytes = |t: &Tensor<T>| {
            let mut v = Vec::with_capacity(t.numel() * T::DTYPE.size());
            t.data().iter().for_each(|x| x.write_le(&mut v));
            v
        };
        self.shape() == other.shape() && bytes(self) == bytes(other)
    }

    /// Converts the element type; the result is a leaf.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::leaf(
            self.data()
                .iter()
                .map(|v| U::from_f64(v.as_f64()))
                .collect(),
            self.shape().to_vec(),
            false,
        )
    }

    /// Slices `[start, end)` along the first axis; the result is a leaf.
    pub fn slice_first(&self, start: usize, end: usize) -> Result<Self> {
        let d0 = *self
            .shape()
            .first()
            .ok_or_else(|| shape_err!("slice of rank-0"))?;
        if start >= end || end > d0 {
            return Err(shape_err!("slice {start}..{end} out of range for dim {d0}"));
        }
        let inner: usize = self.shape()[1..].iter().product();
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        Ok(Self::leaf(
            self.data()[start * inner..end * inner].to_vec(),
            shape,
            false,
        ))
    }

    /// Stacks equal-shape tensors along a new leading axis; the result is a leaf.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape() != first.shape() {
                return Err(shape_err!(
                    "stack shape mismatch {:?} vs {:?}",
                    t.shape(),
                    first.shape()
                ));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(first.shape());
        Ok(Self::leaf(data, shape, false))
    }
}
