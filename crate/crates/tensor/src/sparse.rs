use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Sparse matrix in coordinate form with entries sorted by (row, col).
///
/// Holds binary adjacencies and their degree-normalized counterparts; entries
/// must be strictly positive and index pairs unique.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        for window in entries.windows(2) {
            if window[0].0 == window[1].0 && window[0].1 == window[1].1 {
                return Err(TensorError::Invalid(format!(
                    "duplicate sparse entry at ({}, {})",
                    window[0].0, window[0].1
                )));
            }
        }
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(TensorError::Invalid(format!(
                    "sparse entry ({r}, {c}) out of bounds for {rows}x{cols}"
                )));
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(TensorError::Invalid(format!(
                    "sparse entry ({r}, {c}) must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn transpose(&self) -> SparseMatrix {
        let entries = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        // Re-sorting happens in the constructor; bounds already hold.
        SparseMatrix::new(self.cols, self.rows, entries).expect("transpose preserves validity")
    }

    /// Row degrees (count of entries per row).
    pub fn row_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.rows];
        for &(r, _, _) in &self.entries {
            deg[r] += 1;
        }
        deg
    }

    /// Column degrees (count of entries per column).
    pub fn col_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.cols];
        for &(_, c, _) in &self.entries {
            deg[c] += 1;
        }
        deg
    }

    /// Rebuild with the same pattern but new values, in entry order.
    pub fn with_values(&self, values: Vec<f64>) -> Result<SparseMatrix> {
        if values.len() != self.entries.len() {
            return Err(TensorError::Invalid(
                "value count does not match sparsity pattern".into(),
            ));
        }
        let entries = self
            .entries
            .iter()
            .zip(values)
            .map(|(&(r, c, _), v)| (r, c, v))
            .collect();
        SparseMatrix::new(self.rows, self.cols, entries)
    }

    /// `self * dense` (or `self^T * dense` when `transpose` is set), accumulated
    /// in entry order so it reproduces the dense triple loop bit-for-bit on
    /// binary matrices.
    pub fn matmul_dense(&self, dense: &Tensor, transpose: bool) -> Result<Tensor> {
        let (out_rows, inner) = if transpose {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        };
        if dense.rows() != inner {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_matmul",
                lhs: if transpose {
                    vec![self.cols, self.rows]
                } else {
                    vec![self.rows, self.cols]
                },
                rhs: vec![dense.rows(), dense.cols()],
            });
        }
        let n = dense.cols();
        let mut out = Tensor::zeros(out_rows, n);
        let data = out.data_mut();
        for &(r, c, v) in &self.entries {
            let (i, k) = if transpose { (c, r) } else { (r, c) };
            let src = dense.row(k);
            let dst = &mut data[i * n..(i + 1) * n];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            out.set(r, c, v);
        }
        out
    }
}
