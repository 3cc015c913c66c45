//! Dense rank-2 arrays in row-major order.

use crate::scalar::Scalar;
use crate::{AutodiffError, Result};

/// A dense matrix of shape `(rows, cols)`. Vectors are `(n, 1)` or `(1, n)`
/// and scalars are `(1, 1)`; every tape value has this one rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<S: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Array<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AutodiffError::Shape {
                op: "from_vec",
                detail: format!("{} values for shape ({rows}, {cols})", data.len()),
            });
        }
        Ok(Array { rows, cols, data })
    }

    pub fn scalar(value: S) -> Self {
        Array {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_f64_vec(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&x| S::from_f64(x)).collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single element of a (1, 1) array.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar array");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Array<S> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Reinterpret as another dtype by value (used by gradient checks).
    pub fn cast<T: Scalar>(&self) -> Array<T> {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| T::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Array<S> {
        let mut out = Array::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let a = Array::<f64>::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(a.at(0, 2), 2.0);
        assert_eq!(a.at(1, 0), 3.0);
        assert_eq!(a.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Array::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let a = Array::<f64>::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let t = a.transpose();
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.at(2, 1), 5.0);
        assert_eq!(t.transpose(), a);
    }
}
