//! Flat parameter vectors with layer-shape metadata.
//!
//! Model weights, local updates, the global model and the personal
//! information model are all [`Params`]. Every reduction walks the vector
//! left to right so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One dense layer: a `rows x cols` weight matrix followed by `bias` biases.
///
/// An unstructured vector of length `n` is `LayerShape { rows: 1, cols: n, bias: 0 }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub bias: usize,
}

impl LayerShape {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bias: rows,
        }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    values: Vec<T>,
    shapes: Vec<LayerShape>,
}

impl<T: Scalar> Params<T> {
    /// Validates that `values` matches `shapes` and contains only finite entries.
    pub fn new(values: Vec<T>, shapes: Vec<LayerShape>) -> Result<Self> {
        let expected: usize = shapes.iter().map(LayerShape::size).sum();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values, shapes })
    }

    /// Unstructured vector, used for tests and scalar surrogates.
    pub fn flat(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        Self::new(
            values,
            vec![LayerShape {
                rows: 1,
                cols: n,
                bias: 0,
            }],
        )
    }

    pub fn zeros(shapes: Vec<LayerShape>) -> Self {
        let n = shapes.iter().map(LayerShape::size).sum();
        Self {
            values: vec![T::zero(); n],
            shapes,
        }
    }

    /// Builds from arithmetic results without the finiteness check. Callers
    /// that care run [`Params::check_finite`].
    pub(crate) fn from_parts(values: Vec<T>, shapes: Vec<LayerShape>) -> Self {
        debug_assert_eq!(
            values.len(),
            shapes.iter().map(LayerShape::size).sum::<usize>()
        );
        Self { values, shapes }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shapes != other.shapes {
            return Err(Error::ShapeMismatch {
                left: self.shapes.clone(),
                right: other.shapes.clone(),
            });
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> Result<T> {
        param_l2_norm(self)
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        param_axpy(-T::one(), other, self)
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self::from_parts(
            self.values.iter().map(|&v| v * alpha).collect(),
            self.shapes.clone(),
        )
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other)?;
        let mut acc = T::zero();
        for (&a, &b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        Ok(acc)
    }

    /// Sum of squares, accumulated left to right.
    pub fn sq_norm(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.values {
            acc += v * v;
        }
        acc
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            values: self
                .values
                .iter()
                .map(|v| U::lit(v.to_f64_lossy()))
                .collect(),
            shapes: self.shapes.clone(),
        }
    }
}

/// Returns `y + alpha * x` elementwise.
pub fn param_axpy<T: Scalar>(alpha: T, x: &Params<T>, y: &Params<T>) -> Result<Params<T>> {
    x.same_shape(y)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(&xi, &yi)| yi + alpha * xi)
        .collect();
    Ok(Params::from_parts(values, y.shapes.clone()))
}

/// Euclidean norm. Errors on the first non-finite entry.
pub fn param_l2_norm<T: Scalar>(x: &Params<T>) -> Result<T> {
    x.check_finite()?;
    Ok(x.sq_norm().sqrt())
}
