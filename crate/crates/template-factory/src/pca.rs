//! Principal component bases for region displacement statistics.

use std::path::Path;

use nalgebra::DMatrix;

use crate::container::Container;
use crate::{Result, TemplateError};

const KIND: &str = "surfreg.pca";

/// An orthonormal linear basis with per-component standard deviations.
///
/// `basis` is row-major with `rows` rows and `k()` columns; column order is
/// by descending singular value.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub rows: usize,
    pub basis: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    /// Fits `k` principal directions to the given sample vectors.
    pub fn fit(samples: &[Vec<f64>], k: usize) -> Result<PcaBasis> {
        let n = samples.len();
        if n < 2 {
            return Err(TemplateError::Invalid {
                what: "pca samples",
                msg: format!("need at least 2 samples, got {n}"),
            });
        }
        let rows = samples[0].len();
        if rows == 0 {
            return Err(TemplateError::Invalid { what: "pca samples", msg: "samples are empty vectors".into() });
        }
        for (i, s) in samples.iter().enumerate() {
            if s.len() != rows {
                return Err(TemplateError::Invalid {
                    what: "pca samples",
                    msg: format!("sample {i} has {} entries, expected {rows}", s.len()),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(TemplateError::Invalid {
                    what: "pca samples",
                    msg: format!("sample {i} contains a non-finite value"),
                });
            }
        }
        if k == 0 || k > rows.min(n - 1) {
            return Err(TemplateError::Invalid {
                what: "pca rank",
                msg: format!("k = {k} must lie in 1..={} for {n} samples of dimension {rows}", rows.min(n - 1)),
            });
        }

        // 1. Center the samples and stack them as columns.
        let mut mean = vec![0.0f64; rows];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut mat = DMatrix::<f64>::zeros(rows, n);
        for (j, s) in samples.iter().enumerate() {
            for i in 0..rows {
                mat[(i, j)] = s[i] - mean[i];
            }
        }

        // 2. Thin SVD; order columns by descending singular value.
        let svd = mat.svd(true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b))
        });

        let mut basis = vec![0.0f64; rows * k];
        let mut sigma = vec![0.0f64; k];
        for (c, &src) in order.iter().take(k).enumerate() {
            sigma[c] = svd.singular_values[src] / ((n - 1) as f64).sqrt();
            // 3. Fix the sign so the largest-magnitude entry is positive.
            let col = u.column(src);
            let mut lead = 0usize;
            for i in 0..rows {
                if col[i].abs() > col[lead].abs() {
                    lead = i;
                }
            }
            let flip = if col[lead] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..rows {
                basis[i * k + c] = flip * col[i];
            }
        }
        Ok(PcaBasis { rows, basis, sigma })
    }

    /// Orthogonal projection of `y` onto the basis span.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "projection input has wrong dimension");
        let k = self.k();
        let mut coeff = vec![0.0f64; k];
        for i in 0..self.rows {
            let yi = y[i];
            for c in 0..k {
                coeff[c] += self.basis[i * k + c] * yi;
            }
        }
        let mut out = vec![0.0f64; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for c in 0..k {
                acc += self.basis[i * k + c] * coeff[c];
            }
            out[i] = acc;
        }
        out
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn max_orthonormality_error(&self) -> f64 {
        let k = self.k();
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in a..k {
                let mut dot = 0.0;
                for i in 0..self.rows {
                    dot += self.basis[i * k + a] * self.basis[i * k + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "rows": self.rows, "k": self.k() });
        let mut c = Container::new(KIND, meta);
        c.put_f64("basis", &self.basis);
        c.put_f64("sigma", &self.sigma);
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<PcaBasis> {
        let c = Container::read(path, KIND)?;
        let rows = c.meta["rows"]
            .as_u64()
            .ok_or_else(|| TemplateError::format(path, "missing rows in header"))? as usize;
        let k = c.meta["k"].as_u64().ok_or_else(|| TemplateError::format(path, "missing k in header"))? as usize;
        let basis = c.take_f64("basis", path)?;
        let sigma = c.take_f64("sigma", path)?;
        if basis.len() != rows * k || sigma.len() != k {
            return Err(TemplateError::format(path, "section sizes disagree with header"));
        }
        Ok(PcaBasis { rows, basis, sigma })
    }
}
