//! Sparse CSR matrices with a precomputed transpose for backward passes.

use crate::array::Array;
use crate::scalar::Scalar;
use crate::{AutodiffError, Result};

/// Constant sparse matrix used by upsampling and similar fixed linear maps.
/// The transpose is built once at construction so the backward pass costs
/// the same as the forward pass and needs no per-step sorting.
#[derive(Clone, Debug)]
pub struct Sparse<S: Scalar> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<S>,
    transpose: Option<Box<Sparse<S>>>,
}

impl<S: Scalar> Sparse<S> {
    /// Builds from COO triplets; duplicate entries are summed, exact zeros
    /// dropped. The transpose is precomputed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, S)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(AutodiffError::Invalid {
                    op: "sparse_from_triplets",
                    msg: format!("entry ({r}, {c}) outside shape ({n_rows}, {n_cols})"),
                });
            }
        }
        let mut sorted: Vec<(usize, usize, S)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        // Merge duplicates, then drop exact zeros.
        let mut merged: Vec<(usize, usize, S)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match merged.last_mut() {
                Some((lr, lc, lv)) if *lr == r && *lc == c => *lv += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != S::zero());

        let mut out = Sparse {
            n_rows,
            n_cols,
            indptr: vec![0usize; n_rows + 1],
            indices: Vec::with_capacity(merged.len()),
            values: Vec::with_capacity(merged.len()),
            transpose: None,
        };
        for (r, c, v) in merged {
            out.indices.push(c);
            out.values.push(v);
            out.indptr[r + 1] = out.indices.len();
        }
        for r in 1..=n_rows {
            if out.indptr[r] < out.indptr[r - 1] {
                out.indptr[r] = out.indptr[r - 1];
            }
        }
        out.transpose = Some(Box::new(out.transpose_inner()));
        Ok(out)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[S]) {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    fn transpose_inner(&self) -> Sparse<S> {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![S::zero(); self.nnz()];
        let mut cursor = counts;
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let slot = cursor[c];
                indices[slot] = r;
                values[slot] = self.values[k];
                cursor[c] += 1;
            }
        }
        Sparse {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
            transpose: None,
        }
    }

    /// The transpose, precomputed at construction.
    pub fn transposed(&self) -> &Sparse<S> {
        self.transpose
            .as_deref()
            .expect("transpose precomputed at construction")
    }

    /// Dense product `self * x` where x has shape (n_cols, width).
    pub fn matmul_dense(&self, x: &Array<S>) -> Result<Array<S>> {
        if x.rows != self.n_cols {
            return Err(AutodiffError::Shape {
                op: "sparse_matmul",
                detail: format!(
                    "({}, {}) x ({}, {})",
                    self.n_rows, self.n_cols, x.rows, x.cols
                ),
            });
        }
        let mut out = Array::zeros(self.n_rows, x.cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let orow = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let xrow = &x.data[c * x.cols..(c + 1) * x.cols];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn cast<T: Scalar>(&self) -> Sparse<T> {
        let mut out = Sparse {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self
                .values
                .iter()
                .map(|v| T::from_f64(v.as_f64()))
                .collect(),
            transpose: None,
        };
        out.transpose = Some(Box::new(out.transpose_inner()));
        out
    }
}
