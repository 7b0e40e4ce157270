use crate::error::{Error, Result};

/// Compressed-sparse-row matrix used for constant graph operators.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets sorted by row.
    pub fn from_sorted_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<SparseMatrix> {
        let mut indptr = vec![0; rows + 1];
        let mut last_row = 0;
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols || r < last_row {
                return Err(Error::invalid("triplets out of range or unsorted"));
            }
            last_row = r;
            indptr[r + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices: triplets.iter().map(|t| t.1).collect(),
            values: triplets.iter().map(|t| t.2).collect(),
        })
    }

    /// Block-diagonal stacking of square or rectangular blocks.
    pub fn block_diag(blocks: &[&SparseMatrix]) -> SparseMatrix {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut col_off = 0;
        for b in blocks {
            for r in 0..b.rows {
                for p in b.indptr[r]..b.indptr[r + 1] {
                    indices.push(b.indices[p] + col_off);
                    values.push(b.values[p]);
                }
                indptr.push(indices.len());
            }
            col_off += b.cols;
        }
        SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                out[r * self.cols + self.indices[p]] += self.values[p];
            }
        }
        out
    }

    /// `out += self * x` where `x` is `cols x width` row-major.
    pub(crate) fn mul_dense_acc(&self, x: &[f64], width: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let w = self.values[p];
                let src = &x[self.indices[p] * width..(self.indices[p] + 1) * width];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
            }
        }
    }

    /// `out += self^T * x` where `x` is `rows x width` row-major.
    pub(crate) fn mul_t_dense_acc(&self, x: &[f64], width: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let src = &x[r * width..(r + 1) * width];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let w = self.values[p];
                let c = self.indices[p];
                let dst = &mut out[c * width..(c + 1) * width];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
            }
        }
    }
}
