//! Compressed sparse row matrices (f64), enough for upsamplers and
//! Laplacian assembly: triplet construction, matvec, dense multiply,
//! transpose, row access.

/// CSR matrix. Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets. Duplicate entries are summed;
    /// exact zeros after summation are kept out of the structure.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Csr {
        let mut items: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        items.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(items.len());
        let mut values = Vec::with_capacity(items.len());
        let mut i = 0;
        while i < items.len() {
            let (r, c, mut v) = items[i];
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            i += 1;
            while i < items.len() && items[i].0 == r && items[i].1 == c {
                v += items[i].2;
                i += 1;
            }
            if v != 0.0 {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Csr { n_rows, n_cols, indptr, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    /// Multiplies against a dense row-major matrix of width `width`.
    pub fn matmul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols * width);
        let mut y = vec![0.0; self.n_rows * width];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let out = &mut y[r * width..(r + 1) * width];
            for (c, v) in cols.iter().zip(vals) {
                let src = &x[c * width..c * width + width];
                for k in 0..width {
                    out[k] += v * src[k];
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let triplets = (0..self.n_rows).flat_map(|r| {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .map(move |(c, v)| (*c, r, *v))
                .collect::<Vec<_>>()
        });
        Csr::from_triplets(self.n_cols, self.n_rows, triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_and_drop_zeros() {
        let m = Csr::from_triplets(2, 3, vec![(0, 1, 2.0), (0, 1, 3.0), (1, 2, 1.0), (1, 2, -1.0)]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.row(0), (&[1usize][..], &[5.0][..]));
        assert_eq!(m.row(1).0.len(), 0);
    }

    #[test]
    fn matvec_and_transpose() {
        let m = Csr::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 3.0]);
        let t = m.transpose();
        assert_eq!(t.matvec(&[1.0, 1.0]), vec![4.0, 2.0]);
    }

    #[test]
    fn dense_multiply_matches_matvec_per_column() {
        let m = Csr::from_triplets(3, 2, vec![(0, 0, 1.0), (1, 1, 2.0), (2, 0, -1.0), (2, 1, 0.5)]);
        let x = [1.0, 2.0, 3.0, 4.0]; // 2x2 dense
        let y = m.matmul_dense(&x, 2);
        assert_eq!(y.len(), 6);
        let col0 = m.matvec(&[1.0, 3.0]);
        let col1 = m.matvec(&[2.0, 4.0]);
        assert_eq!(y[0], col0[0]);
        assert_eq!(y[1], col1[0]);
        assert_eq!(y[4], col0[2]);
        assert_eq!(y[5], col1[2]);
    }
}
