//! Dense row-major tensors over a generic real scalar.

use crate::real::Real;
use thiserror::Error;

/// Errors from tensor construction and elementwise arithmetic.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} values, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch for `{operand}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        operand: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

/// Dense row-major array with an ordered dimension list.
///
/// Feature maps use the dimension order `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    /// Builds a tensor, checking the element count and that every value is finite.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![F::zero(); len],
        }
    }

    /// Constant-filled tensor of the given shape.
    pub fn filled(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    /// Ordered dimension list.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the tensor holds no elements.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat row-major view of the values.
    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// Mutable flat row-major view of the values.
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// True when both tensors have identical dimension lists.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    /// Elementwise map preserving the shape.
    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination; `operand` names the right-hand side in shape errors.
    pub fn zip_map(
        &self,
        operand: &'static str,
        other: &Self,
        f: impl Fn(F, F) -> F,
    ) -> Result<Self, TensorError> {
        if !self.same_shape(other) {
            return Err(TensorError::ShapeMismatch {
                operand,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }
}
