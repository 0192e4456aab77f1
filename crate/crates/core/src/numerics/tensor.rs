//! Dense double-precision tensors with row-major storage.
//!
//! A `Tensor` is a cheap-to-clone handle (`Rc` inside). Values are mutable
//! through the handle so an optimizer can update parameters in place between
//! training steps; gradients accumulate additively during the backward pass.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

static NEXT_ID: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

pub(crate) struct TensorInner {
    pub id: u64,
    pub shape: Vec<usize>,
    pub values: RefCell<Vec<f64>>,
    pub grad: RefCell<Option<Vec<f64>>>,
    /// Leaf parameters request gradients explicitly; intermediate tensors
    /// inherit the flag from their inputs when recorded on a tape.
    pub requires_grad: bool,
}

#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<TensorInner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn make(values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let id = NEXT_ID.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Tensor {
            inner: Rc::new(TensorInner {
                id,
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
            }),
        }
    }

    pub fn from_vec(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::invalid(format!(
                "tensor of shape {:?} needs {} values, got {}",
                shape,
                n,
                values.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero extent in shape {:?}", shape)));
        }
        Ok(Self::make(values, shape.to_vec(), false))
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn param(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::invalid(format!(
                "tensor of shape {:?} needs {} values, got {}",
                shape,
                n,
                values.len()
            )));
        }
        Ok(Self::make(values, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::make(vec![0.0; n], shape.to_vec(), false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::make(vec![v], vec![1], false)
    }

    pub(crate) fn computed(values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Self::make(values, shape, requires_grad)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.inner.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.inner.values.borrow()[0]
    }

    /// Overwrite values in place (shape preserved). Used by optimizers and by
    /// the finite-difference harness; never call while a tape referencing the
    /// old values is still pending a backward pass.
    pub fn set_values(&self, values: &[f64]) {
        let mut v = self.inner.values.borrow_mut();
        assert_eq!(v.len(), values.len(), "set_values length mismatch");
        v.copy_from_slice(values);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                debug_assert_eq!(g.len(), delta.len());
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub fn assert_finite(&self, op: &'static str) -> Result<()> {
        if self.inner.values.borrow().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Number of rows when viewed as a matrix (all leading dims collapsed).
    pub fn rows(&self) -> usize {
        let s = &self.inner.shape;
        if s.len() <= 1 {
            1
        } else {
            s[..s.len() - 1].iter().product()
        }
    }

    /// Trailing extent: the column count of the matrix view.
    pub fn cols(&self) -> usize {
        *self.inner.shape.last().unwrap_or(&1)
    }
}
