//! Dense row-major tensors.
//!
//! [`TensorBase`] is a plain value type: shape, data, and an optional
//! gradient of identical shape. It carries no graph bookkeeping, so values
//! can be cloned, sent across threads, and serialized freely. All graph
//! state lives on the [`Tape`](crate::tape::Tape), which is rebuilt for
//! every forward pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor with row-major layout.
///
/// Invariants, enforced at construction and by every mutator:
/// - `data.len()` equals the product of `shape` (empty shape = rank 0 = one
///   scalar element),
/// - every element is finite,
/// - `grad`, when present, has exactly `data.len()` elements.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad_enabled: bool,
    grad: Option<Vec<S>>,
}

/// Number of elements implied by a shape (1 for rank 0).
pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Compact `2x3x4` rendering of a shape for error messages.
pub fn fmt_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".to_string();
    }
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

impl<S: Scalar> TensorBase<S> {
    /// Builds a tensor from a shape and row-major data.
    ///
    /// Fails if the element count does not match the shape product or if any
    /// element is non-finite.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected = numel_of(&shape);
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "shape {} implies {} elements, got {}",
                fmt_shape(&shape),
                expected,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite element at flat index {pos} in new tensor"
            )));
        }
        Ok(Self {
            shape,
            data,
            grad_enabled: false,
            grad: None,
        })
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel_of(&shape);
        Self {
            shape,
            data: vec![S::zero(); n],
            grad_enabled: false,
            grad: None,
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: S) -> Result<Self> {
        Self::new(vec![], vec![v])
    }

    /// Marks the tensor as a gradient target. Returns `self` for chaining.
    pub fn with_grad(mut self) -> Self {
        self.grad_enabled = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Stored gradient, if any. Shape matches `shape()` element for element.
    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Overwrites the stored gradient. Length must match the data.
    pub fn set_grad(&mut self, grad: Vec<S>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "gradient has {} elements, tensor has {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Element at a multi-dimensional index.
    pub fn at(&self, index: &[usize]) -> S {
        self.data[self.flat_index(index)]
    }

    /// Writes one element. The value must be finite.
    pub fn set(&mut self, index: &[usize], v: S) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::Domain("assigning non-finite element".into()));
        }
        let i = self.flat_index(index);
        self.data[i] = v;
        Ok(())
    }

    /// In-place update of every element. The caller must keep values finite;
    /// used by the optimizer and the finite-difference prober where the
    /// update arithmetic guarantees it.
    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(
            index.len(),
            self.shape.len(),
            "index rank {} vs tensor rank {}",
            index.len(),
            self.shape.len()
        );
        let strides = strides_of(&self.shape);
        let mut flat = 0;
        for (d, (&i, &s)) in index.iter().zip(strides.iter()).enumerate() {
            assert!(
                i < self.shape[d],
                "index {i} out of bounds for axis {d} of extent {}",
                self.shape[d]
            );
            flat += i * s;
        }
        flat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = TensorBase<f64>;

    #[test]
    fn create_validates_element_count() {
        let err = T::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(err.kind(), "shape");
        assert!(err.to_string().contains("implies 6"), "got: {err}");
    }

    #[test]
    fn create_rejects_non_finite() {
        let err = T::new(vec![3], vec![1.0, f64::NAN, 2.0]).unwrap_err();
        assert_eq!(err.kind(), "domain");

        let err = T::new(vec![1], vec![f64::INFINITY]).unwrap_err();
        assert_eq!(err.kind(), "domain");
    }

    #[test]
    fn rank_zero_scalar_has_one_element() {
        let t = T::scalar(4.25).unwrap();
        assert_eq!(t.rank(), 0);
        assert_eq!(t.numel(), 1);
        assert_eq!(t.data(), &[4.25]);
    }

    #[test]
    fn row_major_indexing() {
        // 2x3: rows are contiguous.
        let t = T::new(vec![2, 3], vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 10.0);
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
    }

    #[test]
    fn grad_shape_is_enforced() {
        let mut t = T::zeros(vec![2, 2]);
        assert!(t.set_grad(vec![1.0; 3]).is_err());
        t.set_grad(vec![1.0; 4]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0; 4]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn tensors_are_plain_values_across_threads() {
        let t = T::new(vec![2], vec![1.0, 2.0]).unwrap();
        let t2 = t.clone();
        let handle = std::thread::spawn(move || t2.data().iter().sum::<f64>());
        assert_eq!(handle.join().unwrap(), 3.0);
        assert_eq!(t.data(), &[1.0, 2.0]);
    }
}
