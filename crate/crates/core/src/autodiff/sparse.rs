use std::sync::Arc;

use super::Matrix;
use crate::exec::{self, Exec};

/// Fixed sparsity pattern of a CSR matrix together with the permutation
/// that lays its values out in transposed (CSC) order.
#[derive(Debug, PartialEq, Eq)]
struct Pattern {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    t_offsets: Vec<usize>,
    t_indices: Vec<usize>,
    t_perm: Vec<usize>,
}

/// Constant CSR matrix used as the left operand of sparse-dense products.
/// Cloning shares the pattern; [`SparseMatrix::with_values`] swaps values
/// without rebuilding it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &Matrix) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        let mut t_offsets = vec![0usize; m.cols() + 1];
        for &c in &indices {
            t_offsets[c + 1] += 1;
        }
        for c in 0..m.cols() {
            t_offsets[c + 1] += t_offsets[c];
        }
        let mut cursor = t_offsets.clone();
        let mut t_indices = vec![0; indices.len()];
        let mut t_perm = vec![0; indices.len()];
        for r in 0..m.rows() {
            for e in offsets[r]..offsets[r + 1] {
                let c = indices[e];
                t_indices[cursor[c]] = r;
                t_perm[cursor[c]] = e;
                cursor[c] += 1;
            }
        }
        SparseMatrix {
            pattern: Arc::new(Pattern {
                rows: m.rows(),
                cols: m.cols(),
                offsets,
                indices,
                t_offsets,
                t_indices,
                t_perm,
            }),
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.pattern.rows
    }

    pub fn cols(&self) -> usize {
        self.pattern.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same pattern, new stored values (zeros allowed).
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        SparseMatrix {
            pattern: Arc::clone(&self.pattern),
            values,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let p = &self.pattern;
        let mut m = Matrix::zeros(p.rows, p.cols);
        for r in 0..p.rows {
            for e in p.offsets[r]..p.offsets[r + 1] {
                m.set(r, p.indices[e], self.values[e]);
            }
        }
        m
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix, exec: Exec) -> Matrix {
        let p = &self.pattern;
        debug_assert_eq!(p.cols, rhs.rows());
        let n = rhs.cols();
        let mut out = Matrix::zeros(p.rows, n);
        exec::for_each_row(exec, out.data_mut(), n, |r, orow| {
            for e in p.offsets[r]..p.offsets[r + 1] {
                axpy(orow, self.values[e], rhs.row(p.indices[e]));
            }
        });
        out
    }

    /// `self^T * rhs`.
    pub fn matmul_t(&self, rhs: &Matrix, exec: Exec) -> Matrix {
        let p = &self.pattern;
        debug_assert_eq!(p.rows, rhs.rows());
        let n = rhs.cols();
        let mut out = Matrix::zeros(p.cols, n);
        exec::for_each_row(exec, out.data_mut(), n, |c, orow| {
            for t in p.t_offsets[c]..p.t_offsets[c + 1] {
                axpy(orow, self.values[p.t_perm[t]], rhs.row(p.t_indices[t]));
            }
        });
        out
    }
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    if a == 0.0 {
        return;
    }
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_products() {
        let d = Matrix::from_rows(&[
            [0.0, 2.0, 0.0],
            [1.0, 0.0, -3.0],
            [0.0, 0.0, 0.0],
            [4.0, 0.5, 0.0],
        ]);
        let s = SparseMatrix::from_dense(&d);
        assert_eq!(s.nnz(), 5);
        assert_eq!(s.to_dense(), d);
        let b = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(s.matmul(&b, Exec::Sequential), d.matmul(&b).unwrap());
        let c = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]);
        assert_eq!(
            s.matmul_t(&c, Exec::Sequential),
            d.transpose().matmul(&c).unwrap()
        );
        let z = s.with_values(vec![0.0; 5]);
        assert_eq!(z.matmul(&b, Exec::Sequential), Matrix::zeros(4, 2));
    }
}
